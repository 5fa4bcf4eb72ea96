//! Priority-queue driven generative optimization: a candidate memory ordered
//! by exploration priority, an ε-net filter on proposal embeddings, and the
//! search loop tying them to external oracles.

pub mod engine;
pub mod error;
pub mod filter;
pub mod memory;
pub mod metrics;
pub mod oracles;
pub mod prompts;
pub mod strategies;
pub mod synthetic;
pub mod theory;
pub mod trace;
pub mod types;

pub use engine::{run, Oracles, RunOutcome, SearchConfig};
pub use error::{Error, OracleError, Result};
pub use memory::{Memory, MemoryEntry, MemorySnapshot};
pub use metrics::MetricCounters;
pub use types::{Candidate, CandidateId, Observation, Task};
