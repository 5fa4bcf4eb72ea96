//! Command-line driver: configuration loading, run outputs, the theory
//! harness front end, snapshot audits and trace replay.

pub mod audit;
pub mod cli;
pub mod config;
pub mod harness;
pub mod run;

pub use cli::{dispatch, Cli, Command};
pub use config::{load_config, parse_config, EffectiveConfig, OracleKind, Overrides};
pub use run::{replay, run_search, RunArtifacts, RunSummary};
