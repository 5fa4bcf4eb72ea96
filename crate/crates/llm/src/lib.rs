//! Oracles backed by OpenAI-compatible HTTP endpoints: chat completions
//! drive the optimizer, summarizer and prompted programs, and the embeddings
//! endpoint drives the ε-net filter.
//!
//! The API key is read from an environment variable and kept out of every
//! log line, error and trace.

pub mod client;
pub mod config;
pub mod error;
pub mod mock;
pub mod oracles;
pub mod parse;

pub use client::{ChatMessage, ChatRequest, EmbeddingRequest, LlmClient, Role};
pub use config::LlmEndpointConfig;
pub use error::LlmError;
pub use oracles::{LlmEmbedder, LlmOptimizer, LlmProgram, LlmSummarizer};
pub use parse::parse_proposal;
