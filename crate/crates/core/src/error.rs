use thiserror::Error;

use crate::types::CandidateId;

/// Failure reported by an external oracle (program, guide, optimizer,
/// embedder or summarizer).
#[derive(Debug, Clone, Error, PartialEq)]
#[error("{oracle} failed: {message}")]
pub struct OracleError {
    pub oracle: &'static str,
    pub message: String,
}

impl OracleError {
    pub fn new(oracle: &'static str, message: impl Into<String>) -> Self {
        Self {
            oracle,
            message: message.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("candidate {0} is already present in memory")]
    DuplicateCandidate(CandidateId),

    #[error("observation references unknown candidate {0}")]
    UnknownCandidate(CandidateId),

    #[error("memory has no sampled entries")]
    NoSampledEntries,

    #[error("memory is empty")]
    EmptyMemory,

    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("candidate {0} has no embedding")]
    MissingEmbedding(CandidateId),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("batch size must be at least 1")]
    ZeroBatchSize,

    #[error("nothing to {0}: candidate list is empty")]
    NothingToDo(&'static str),

    #[error("non-finite reward {reward} for candidate {candidate}")]
    NonFiniteReward { candidate: CandidateId, reward: f64 },

    #[error("every evaluation in the batch failed (first error: {0})")]
    BatchFailed(OracleError),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("budget of {budget} metric calls cannot fit a first evaluation of {needed}")]
    BudgetTooSmall { budget: u64, needed: u64 },

    #[error("simulation did not converge within {0} steps")]
    NonConvergence(u64),

    #[error("malformed trace: {0}")]
    Trace(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
