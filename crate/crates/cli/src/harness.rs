//! The `theory` subcommand: hitting-time Monte Carlo and the
//! suboptimal-selection growth check.

use std::path::Path;

use anyhow::Context;
use polca_core::synthetic::{EmbeddingKind, FailureMode, NoiseKind, SyntheticEnvConfig};
use polca_core::theory::{
    estimate_hitting_time, least_squares, single_select_count, selection_count_bound, SingleSelectConfig, Walk,
};
use polca_core::engine::derive_seed;
use serde::Serialize;

/// Allowed distance between Monte Carlo mean and closed form, in standard errors.
pub const Z_TOLERANCE: f64 = 3.0;
/// Minimum R² of the seed-averaged selection count against `ln n`.
pub const MIN_R_SQUARED: f64 = 0.9;

#[derive(Debug, Clone, clap::Args)]
pub struct TheoryArgs {
    /// Success probabilities to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.8])]
    pub delta0: Vec<f64>,
    /// Gaps to sweep; each gives `reward_cap / gamma` levels.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.1])]
    pub gamma: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub reward_cap: f64,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    /// Horizons `n` for the selection-count check.
    #[arg(long = "n-grid", value_delimiter = ',', default_values_t = vec![1_000, 10_000])]
    pub n_grid: Vec<u64>,
    /// Seeds per horizon.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Reward noise for the selection check.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub selection_delta0: f64,
    #[arg(long, default_value_t = 0.2)]
    pub selection_gamma: f64,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 2)]
    pub embedding_dim: usize,
    #[arg(long, value_enum, default_value_t = EmbeddingArg::MeanAligned)]
    pub embedding: EmbeddingArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Skip the selection-count runs.
    #[arg(long)]
    pub skip_selection: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EmbeddingArg {
    Hashed,
    MeanAligned,
}

impl From<EmbeddingArg> for EmbeddingKind {
    fn from(e: EmbeddingArg) -> Self {
        match e {
            EmbeddingArg::Hashed => EmbeddingKind::Hashed,
            EmbeddingArg::MeanAligned => EmbeddingKind::MeanAligned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HittingRow {
    pub walk: &'static str,
    pub delta0: f64,
    pub levels: u64,
    pub analytic: f64,
    pub mean: f64,
    pub stderr: f64,
    pub z: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub horizon: u64,
    pub seed: u64,
    pub count: u64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub hitting: Vec<HittingRow>,
    /// Per grid point: sequential mean strictly above the polca mean.
    pub polca_faster: Vec<bool>,
    pub selection: Vec<SelectionRow>,
    pub r_squared: Option<f64>,
    pub pass: bool,
}

fn hitting_rows(args: &TheoryArgs) -> anyhow::Result<(Vec<HittingRow>, Vec<bool>)> {
    let mut rows = Vec::new();
    let mut faster = Vec::new();
    for (i, &delta0) in args.delta0.iter().enumerate() {
        for (j, &gamma) in args.gamma.iter().enumerate() {
            let env = SyntheticEnvConfig {
                reward_cap: args.reward_cap,
                gamma,
                delta0,
                // The closed form for the sequential walk assumes a failed
                // step sends it back to the start.
                failure_mode: FailureMode::Restart,
                ..SyntheticEnvConfig::default()
            };
            env.validate()?;
            let seed = derive_seed(args.seed, (i * args.gamma.len() + j) as u64);
            let mut means = [0.0; 2];
            for (slot, walk) in [Walk::Sequential, Walk::Polca].into_iter().enumerate() {
                let est = estimate_hitting_time(walk, &env, args.replicates, derive_seed(seed, slot as u64))?;
                let z = est.z_score();
                means[slot] = est.empirical.mean;
                rows.push(HittingRow {
                    walk: match walk {
                        Walk::Sequential => "sequential",
                        Walk::Polca => "polca",
                    },
                    delta0,
                    levels: est.levels,
                    analytic: est.analytic,
                    mean: est.empirical.mean,
                    stderr: est.empirical.stderr,
                    z,
                    pass: z.abs() <= Z_TOLERANCE,
                });
            }
            faster.push(means[1] < means[0]);
        }
    }
    Ok((rows, faster))
}

fn selection_rows(args: &TheoryArgs) -> anyhow::Result<(Vec<SelectionRow>, Option<f64>)> {
    let env = SyntheticEnvConfig {
        reward_cap: args.reward_cap,
        gamma: args.selection_gamma,
        delta0: args.selection_delta0,
        sigma: args.sigma,
        noise: if args.sigma > 0.0 { NoiseKind::Gaussian } else { NoiseKind::None },
        embedding_dim: args.embedding_dim,
        embedding: args.embedding.into(),
        ..SyntheticEnvConfig::default()
    };
    env.validate()?;
    let mut rows = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &n in &args.n_grid {
        let mut total = 0.0;
        for s in 0..args.seeds {
            let cfg = SingleSelectConfig {
                env: env.clone(),
                horizon: n,
                epsilon: args.epsilon,
                seed: derive_seed(args.seed, s),
            };
            let count = single_select_count(&cfg).with_context(|| format!("selection run n={n} seed={s}"))?;
            let bound = selection_count_bound(&env, cfg.n_eps()?, n);
            total += count as f64;
            rows.push(SelectionRow {
                horizon: n,
                seed: s,
                count,
                bound,
                pass: (count as f64) <= bound,
            });
        }
        xs.push((n as f64).ln());
        ys.push(total / args.seeds.max(1) as f64);
    }
    Ok((rows, least_squares(&xs, &ys).map(|f| f.r_squared)))
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Runs the checks and, when `output_dir` is given, writes
/// `theory_hitting.csv` and `theory_selection.csv` there.
pub fn run_theory(args: &TheoryArgs, output_dir: Option<&Path>) -> anyhow::Result<TheoryReport> {
    let (hitting, polca_faster) = hitting_rows(args)?;
    let (selection, r_squared) = if args.skip_selection || args.n_grid.is_empty() {
        (Vec::new(), None)
    } else {
        selection_rows(args)?
    };
    let fit_ok = args.skip_selection || args.n_grid.len() < 2 || r_squared.is_some_and(|r| r >= MIN_R_SQUARED);
    let pass = hitting.iter().all(|r| r.pass)
        && polca_faster.iter().all(|&b| b)
        && selection.iter().all(|r| r.pass)
        && fit_ok;
    if let Some(dir) = output_dir {
        std::fs::create_dir_all(dir)?;
        write_csv(&hitting, &dir.join("theory_hitting.csv"))?;
        if !selection.is_empty() {
            write_csv(&selection, &dir.join("theory_selection.csv"))?;
        }
    }
    Ok(TheoryReport {
        hitting,
        polca_faster,
        selection,
        r_squared,
        pass,
    })
}
