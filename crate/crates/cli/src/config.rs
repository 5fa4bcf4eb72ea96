//! Configuration loading: a TOML file merged with command-line overrides.
//!
//! Top-level keys are the search parameters (`batch_size`, `epsilon`, ...)
//! plus `oracle`, `dataset` and `initial_payload`. The `[env]` table
//! configures the synthetic environment and `[llm]` the model endpoint.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::ValueEnum;
use polca_core::strategies::PriorityKind;
use polca_core::synthetic::SyntheticEnvConfig;
use polca_core::theory::IntervalPartition;
use polca_core::SearchConfig;
use polca_llm::LlmEndpointConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    #[default]
    Synthetic,
    Llm,
}

/// Everything a `run` needs, after merging file and flags. This is what
/// gets echoed into the trace header.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveConfig {
    #[serde(flatten)]
    pub search: SearchConfig,
    pub oracle: OracleKind,
    pub env: SyntheticEnvConfig,
    pub llm: LlmEndpointConfig,
    pub dataset: Option<PathBuf>,
    pub initial_payload: Option<String>,
}

impl Default for EffectiveConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::default(),
            oracle: OracleKind::Synthetic,
            env: SyntheticEnvConfig::default(),
            llm: LlmEndpointConfig::default(),
            dataset: None,
            initial_payload: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub budget_metric_calls: Option<u64>,
    #[arg(long, allow_negative_numbers = true)]
    pub epsilon: Option<f64>,
    /// mean | ucb_theory | ucb_beta | lifo | beam
    #[arg(long)]
    pub priority: Option<PriorityKind>,
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub num_candidates: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub num_batches: Option<usize>,
    #[arg(long)]
    pub max_parallel: Option<usize>,
    #[arg(long, value_enum)]
    pub oracle: Option<OracleKind>,
}

impl Overrides {
    fn apply(&self, cfg: &mut EffectiveConfig) {
        let s = &mut cfg.search;
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field {
                    s.$field = v;
                }
            )*};
        }
        set!(seed, budget_metric_calls, epsilon, priority, sigma, beta, num_candidates, batch_size, num_batches, max_parallel);
        if let Some(o) = self.oracle {
            cfg.oracle = o;
        }
    }
}

const EXTRA_KEYS: [&str; 5] = ["oracle", "env", "llm", "dataset", "initial_payload"];

fn field_names<T: Serialize>(value: &T) -> BTreeSet<String> {
    match serde_json::to_value(value) {
        Ok(serde_json::Value::Object(map)) => map.keys().cloned().collect(),
        _ => BTreeSet::new(),
    }
}

fn unknown_keys(table: &toml::Table, known: &BTreeSet<String>, prefix: &str, out: &mut Vec<String>) {
    for key in table.keys() {
        if !known.contains(key) {
            out.push(format!("{prefix}{key}"));
        }
    }
}

fn section<T: for<'de> Deserialize<'de> + Default>(table: &toml::Table, name: &str) -> anyhow::Result<T> {
    match table.get(name) {
        None => Ok(T::default()),
        Some(v) => v.clone().try_into().with_context(|| format!("invalid [{name}] section")),
    }
}

/// Parses config text. Every unknown key, including ones inside `[env]`
/// and `[llm]`, is reported in a single error.
pub fn parse_config(text: &str, base_dir: Option<&Path>) -> anyhow::Result<EffectiveConfig> {
    let table: toml::Table = text.parse().context("config is not valid TOML")?;

    let search_keys = field_names(&SearchConfig::default());
    let mut known = search_keys.clone();
    known.extend(EXTRA_KEYS.iter().map(|k| k.to_string()));
    let mut unknown = Vec::new();
    unknown_keys(&table, &known, "", &mut unknown);
    for (name, keys) in [
        ("env", field_names(&SyntheticEnvConfig::default())),
        ("llm", field_names(&LlmEndpointConfig::default())),
    ] {
        match table.get(name) {
            Some(toml::Value::Table(t)) => unknown_keys(t, &keys, &format!("{name}."), &mut unknown),
            Some(_) => bail!("`{name}` must be a table"),
            None => {}
        }
    }
    if !unknown.is_empty() {
        bail!("unknown config keys: {}", unknown.join(", "));
    }

    let search_table: toml::Table = table
        .iter()
        .filter(|(k, _)| search_keys.contains(*k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    let search: SearchConfig = toml::Value::Table(search_table)
        .try_into()
        .context("invalid search parameters")?;
    let oracle = match table.get("oracle") {
        None => OracleKind::default(),
        Some(v) => v.clone().try_into().context("`oracle` must be \"synthetic\" or \"llm\"")?,
    };
    let dataset = match table.get("dataset") {
        None => None,
        Some(toml::Value::String(p)) => {
            let p = PathBuf::from(p);
            Some(match base_dir {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            })
        }
        Some(_) => bail!("`dataset` must be a path string"),
    };
    let initial_payload = match table.get("initial_payload") {
        None => None,
        Some(toml::Value::String(s)) => Some(s.clone()),
        Some(_) => bail!("`initial_payload` must be a string"),
    };
    Ok(EffectiveConfig {
        search,
        oracle,
        env: section(&table, "env")?,
        llm: section(&table, "llm")?,
        dataset,
        initial_payload,
    })
}

/// Reads the optional file, applies overrides and validates the result.
/// Relative dataset paths resolve against the config file's directory.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<EffectiveConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("cannot read config {}", p.display()))?;
            parse_config(&text, p.parent()).with_context(|| format!("in {}", p.display()))?
        }
        None => EffectiveConfig::default(),
    };
    overrides.apply(&mut cfg);
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &EffectiveConfig) -> anyhow::Result<()> {
    cfg.search.validate()?;
    match cfg.oracle {
        OracleKind::Synthetic => {
            cfg.env.validate()?;
            // The interval analysis needs B to split evenly into γ/2 pieces.
            IntervalPartition::new(cfg.env.gamma, cfg.env.reward_cap)?;
        }
        OracleKind::Llm => {
            cfg.llm.validate()?;
            if cfg.dataset.is_none() {
                return Err(anyhow!("invalid config field `dataset`: required for the llm oracle"));
            }
            match &cfg.initial_payload {
                Some(p) if !p.trim().is_empty() => {}
                _ => return Err(anyhow!("invalid config field `initial_payload`: required for the llm oracle")),
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_accepted() {
        let cfg = load_config(None, &Overrides::default()).unwrap();
        assert_eq!(cfg.search.num_candidates, 5);
        assert_eq!(cfg.search.batch_size, 2);
        assert_eq!(cfg.search.num_batches, 1);
        assert_eq!(cfg.search.epsilon, 0.1);
        assert_eq!(cfg.oracle, OracleKind::Synthetic);
    }

    #[test]
    fn flags_beat_file() {
        let mut cfg = parse_config("batch_size = 2\nseed = 9\n", None).unwrap();
        let o = Overrides {
            batch_size: Some(4),
            ..Default::default()
        };
        o.apply(&mut cfg);
        assert_eq!(cfg.search.batch_size, 4);
        assert_eq!(cfg.search.seed, 9);
    }

    #[test]
    fn negative_epsilon_names_the_field() {
        let mut cfg = parse_config("epsilon = -1.0", None).unwrap();
        let err = validate(&cfg).unwrap_err().to_string();
        assert!(err.contains("epsilon"), "{err}");
        cfg.search.epsilon = 0.0;
        validate(&cfg).unwrap();
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = parse_config("bach_size = 2\n[env]\ngama = 0.1\n[llm]\nmodle = \"x\"\n", None)
            .unwrap_err()
            .to_string();
        for key in ["bach_size", "env.gama", "llm.modle"] {
            assert!(err.contains(key), "{err}");
        }
    }

    #[test]
    fn sections_and_paths() {
        let cfg = parse_config(
            "oracle = \"llm\"\ndataset = \"tasks.jsonl\"\ninitial_payload = \"Be brief.\"\npriority = \"ucb_beta\"\n[llm]\nmodel = \"m\"\n[env]\ngamma = 0.25\n",
            Some(Path::new("/cfg")),
        )
        .unwrap();
        assert_eq!(cfg.oracle, OracleKind::Llm);
        assert_eq!(cfg.dataset.as_deref(), Some(Path::new("/cfg/tasks.jsonl")));
        assert_eq!(cfg.llm.model, "m");
        assert_eq!(cfg.env.gamma, 0.25);
        assert_eq!(cfg.search.priority, PriorityKind::UcbBeta);
        validate(&cfg).unwrap();
    }

    #[test]
    fn theory_runs_need_divisible_cap() {
        let cfg = parse_config("[env]\ngamma = 0.3\n", None).unwrap();
        assert!(validate(&cfg).unwrap_err().to_string().contains("gamma"));
    }

    #[test]
    fn llm_mode_needs_dataset_and_payload() {
        let cfg = parse_config("oracle = \"llm\"\n", None).unwrap();
        assert!(validate(&cfg).unwrap_err().to_string().contains("dataset"));
    }

    #[test]
    fn effective_config_echo_is_flat() {
        let v = serde_json::to_value(EffectiveConfig::default()).unwrap();
        assert_eq!(v["batch_size"], 2);
        assert_eq!(v["oracle"], "synthetic");
        assert!(v["env"].is_object());
    }

    #[test]
    fn bundled_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let synthetic = load_config(Some(&dir.join("synthetic.toml")), &Overrides::default()).unwrap();
        assert_eq!(synthetic.search.priority, PriorityKind::UcbTheory);
        let llm = load_config(Some(&dir.join("llm.toml")), &Overrides::default()).unwrap();
        assert_eq!(llm.oracle, OracleKind::Llm);
        assert!(llm.dataset.unwrap().ends_with("tasks.jsonl"));
    }
}
