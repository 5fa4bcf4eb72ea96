use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum LlmError {
    #[error("invalid endpoint configuration: {0}")]
    Config(String),

    #[error("environment variable {var} holding the API key is not set")]
    MissingKey { var: String },

    #[error("request failed{}: {message}", status.map(|s| format!(" with HTTP {s}")).unwrap_or_default())]
    Transport { status: Option<u16>, message: String },

    #[error("malformed response: {0}")]
    Parse(String),

    #[error("embedding dimension changed from {expected} to {found}")]
    DimensionDrift { expected: usize, found: usize },

    #[error("invalid request: {0}")]
    InvalidInput(String),
}

impl LlmError {
    /// Rate limits, server errors and connection failures are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            LlmError::Transport { status: None, .. } => true,
            LlmError::Transport { status: Some(s), .. } => *s == 429 || (500..600).contains(s),
            _ => false,
        }
    }
}

pub type Result<T, E = LlmError> = std::result::Result<T, E>;
