//! Command-line surface and dispatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::audit::audit_file;
use crate::config::{load_config, Overrides};
use crate::harness::{run_theory, TheoryArgs};
use crate::run::{replay, run_search, METRICS_FILE};

#[derive(Debug, Parser)]
#[command(name = "polca", version, about = "Priority-queue generative optimization with an epsilon-net filter")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a search and write trace.jsonl, metrics.csv, summary.json and memory.json.
    Run {
        /// TOML config; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long, default_value = "polca-out")]
        output_dir: PathBuf,
    },
    /// Check hitting times and selection-count growth on the synthetic environment.
    Theory {
        #[command(flatten)]
        args: TheoryArgs,
        /// Where to write theory_hitting.csv and theory_selection.csv.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Audit a memory snapshot (memory.json) for epsilon-net separation.
    FilterCheck {
        snapshot: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
    },
    /// Rebuild metrics.csv from a trace and verify its counters.
    Replay {
        trace: PathBuf,
        /// Output directory for metrics.csv; defaults to the trace's directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn status(pass: bool) -> ExitCode {
    if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

/// Executes one parsed command. Checks that fail return `ExitCode::FAILURE`.
pub fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run {
            config,
            overrides,
            output_dir,
        } => {
            let cfg = load_config(config.as_deref(), &overrides)?;
            let out = run_search(&cfg, &output_dir)?;
            print_json(&out.summary)?;
            eprintln!("wrote {}", output_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Theory { args, output_dir } => {
            let report = run_theory(&args, output_dir.as_deref())?;
            for r in &report.hitting {
                println!(
                    "{:<10} delta0={:<4} N={:<3} analytic={:<10.4} mean={:<10.4} se={:<8.4} |z|={:.2} {}",
                    r.walk,
                    r.delta0,
                    r.levels,
                    r.analytic,
                    r.mean,
                    r.stderr,
                    r.z,
                    if r.pass { "PASS" } else { "FAIL" }
                );
            }
            if let Some(r2) = report.r_squared {
                println!("selection count vs ln n: R^2 = {r2:.4}");
            }
            let over = report.selection.iter().filter(|r| !r.pass).count();
            if !report.selection.is_empty() {
                println!("selection runs over the bound: {over} of {}", report.selection.len());
            }
            println!("{}", if report.pass { "PASS" } else { "FAIL" });
            Ok(status(report.pass))
        }
        Command::FilterCheck { snapshot, epsilon } => {
            let audit = audit_file(&snapshot, epsilon)?;
            print_json(&audit)?;
            Ok(status(audit.pass))
        }
        Command::Replay { trace, output_dir } => {
            let dir = output_dir
                .or_else(|| trace.parent().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("."));
            std::fs::create_dir_all(&dir)?;
            let report = replay(&trace, &dir.join(METRICS_FILE))?;
            print_json(&report)?;
            Ok(status(report.counters_match))
        }
    }
}
