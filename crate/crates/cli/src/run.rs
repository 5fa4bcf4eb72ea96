//! The `run` and `replay` subcommands and the files they write.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use polca_core::metrics::{metrics_curves, reconstruct_counters, MetricsRow};
use polca_core::oracles::{IdentityProgram, ReferenceGuide};
use polca_core::synthetic::SyntheticOracle;
use polca_core::trace::{read_trace, EventBody, JsonlSink, TraceEvent, TraceHeader};
use polca_core::{MetricCounters, Oracles, RunOutcome, Task};
use polca_llm::{LlmClient, LlmEmbedder, LlmOptimizer, LlmProgram, LlmSummarizer};
use serde::Serialize;

use crate::config::{EffectiveConfig, OracleKind};

pub const TRACE_FILE: &str = "trace.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MEMORY_FILE: &str = "memory.json";

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub best_candidate_id: u64,
    pub best_payload: String,
    pub best_mean: f64,
    pub counters: MetricCounters,
    pub iterations: u64,
    pub candidates: usize,
}

impl RunSummary {
    fn from_outcome(outcome: &RunOutcome) -> Self {
        Self {
            run_id: outcome.memory.run_id().to_string(),
            best_candidate_id: outcome.best.id.0,
            best_payload: outcome.best.payload.clone(),
            best_mean: outcome.best_mean,
            counters: outcome.counters,
            iterations: outcome.iterations,
            candidates: outcome.memory.len(),
        }
    }
}

/// Reads tasks from a JSON array or from JSON lines, one task per line.
pub fn load_dataset(path: &Path) -> anyhow::Result<Vec<Task>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read dataset {}", path.display()))?;
    let tasks: Vec<Task> = if text.trim_start().starts_with('[') {
        serde_json::from_str(&text).with_context(|| format!("{} is not a JSON array of tasks", path.display()))?
    } else {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
            .collect::<anyhow::Result<_>>()?
    };
    if tasks.is_empty() {
        bail!("dataset {} has no tasks", path.display());
    }
    Ok(tasks)
}

/// Writes the CSV consumed by plotting tools: `step_kind,step_index,best_score`.
pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> anyhow::Result<()> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    std::io::Write::write_all(&mut w, b"\n")?;
    Ok(())
}

pub fn read_trace_file(path: &Path) -> anyhow::Result<(TraceHeader, Vec<TraceEvent>)> {
    let file = File::open(path).with_context(|| format!("cannot open trace {}", path.display()))?;
    read_trace(BufReader::new(file)).with_context(|| format!("in {}", path.display()))
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub summary: RunSummary,
    pub trace: PathBuf,
    pub metrics: PathBuf,
    pub summary_path: PathBuf,
    pub memory: PathBuf,
}

fn execute(cfg: &EffectiveConfig, sink: &mut JsonlSink<BufWriter<File>>) -> anyhow::Result<RunOutcome> {
    match cfg.oracle {
        OracleKind::Synthetic => {
            let oracle = SyntheticOracle::new(cfg.env.clone())?;
            let dataset = match &cfg.dataset {
                Some(p) => load_dataset(p)?,
                None => vec![Task::new("t0", "")],
            };
            let initial = cfg.initial_payload.clone().unwrap_or_else(|| oracle.initial_payload());
            let oracles = Oracles {
                program: &IdentityProgram,
                guide: &oracle,
                optimizer: &oracle,
                embedder: &oracle,
                summarizer: None,
            };
            Ok(polca_core::run(&cfg.search, &dataset, &initial, &oracles, sink)?)
        }
        OracleKind::Llm => {
            let path = cfg.dataset.as_deref().context("the llm oracle needs a dataset")?;
            let dataset = load_dataset(path)?;
            let initial = cfg.initial_payload.as_deref().context("the llm oracle needs initial_payload")?;
            let client = Arc::new(LlmClient::from_env(cfg.llm.clone())?);
            let program = LlmProgram::new(Arc::clone(&client));
            let optimizer = LlmOptimizer::new(Arc::clone(&client));
            let embedder = LlmEmbedder::new(Arc::clone(&client));
            let summarizer = LlmSummarizer::new(client);
            let oracles = Oracles {
                program: &program,
                guide: &ReferenceGuide,
                optimizer: &optimizer,
                embedder: &embedder,
                summarizer: Some(&summarizer),
            };
            Ok(polca_core::run(&cfg.search, &dataset, initial, &oracles, sink)?)
        }
    }
}

/// Runs a search and writes `trace.jsonl`, `metrics.csv`, `summary.json`
/// and `memory.json` into `output_dir`. The trace is streamed, so a failed
/// run still leaves every event produced before the failure on disk.
pub fn run_search(cfg: &EffectiveConfig, output_dir: &Path) -> anyhow::Result<RunArtifacts> {
    std::fs::create_dir_all(output_dir).with_context(|| format!("cannot create {}", output_dir.display()))?;
    let trace = output_dir.join(TRACE_FILE);
    let file = File::create(&trace).with_context(|| format!("cannot create {}", trace.display()))?;
    let header = TraceHeader::new(format!("run-{:016x}", cfg.search.seed), serde_json::to_value(cfg)?);
    let mut sink = JsonlSink::new(BufWriter::new(file), &header)?;
    let outcome = execute(cfg, &mut sink).with_context(|| format!("run failed; partial trace kept at {}", trace.display()))?;
    drop(sink.into_inner());

    let (_, events) = read_trace_file(&trace)?;
    let metrics = output_dir.join(METRICS_FILE);
    write_metrics_csv(&metrics_curves(&events)?, &metrics)?;
    let summary = RunSummary::from_outcome(&outcome);
    let summary_path = output_dir.join(SUMMARY_FILE);
    write_json(&summary, &summary_path)?;
    let memory = output_dir.join(MEMORY_FILE);
    write_json(&outcome.memory.to_snapshot(), &memory)?;
    Ok(RunArtifacts {
        summary,
        trace,
        metrics,
        summary_path,
        memory,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub events: usize,
    pub rows: usize,
    pub reconstructed: MetricCounters,
    pub recorded: MetricCounters,
    pub counters_match: bool,
    pub best_mean: f64,
}

/// Re-derives `metrics.csv` from a trace and checks that the counters
/// rebuilt from the events agree with the ones the run recorded.
pub fn replay(trace: &Path, metrics_out: &Path) -> anyhow::Result<ReplayReport> {
    let (_, events) = read_trace_file(trace)?;
    let rows = metrics_curves(&events)?;
    write_metrics_csv(&rows, metrics_out)?;
    let end = match events.last().map(|e| &e.body) {
        Some(EventBody::RunEnd(end)) => end,
        _ => bail!("trace does not end with run_end"),
    };
    let reconstructed = reconstruct_counters(&events);
    Ok(ReplayReport {
        events: events.len(),
        rows: rows.len(),
        reconstructed,
        recorded: end.counters,
        counters_match: reconstructed == end.counters,
        best_mean: end.best_mean,
    })
}
