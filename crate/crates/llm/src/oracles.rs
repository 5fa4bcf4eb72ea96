//! Oracle implementations backed by an [`LlmClient`].
//!
//! The optimizer prompt lists, in order: the current parameter, each rollout
//! of this iteration (input, output, reward, feedback), and the history
//! summary. The model is asked to answer with the new parameter in a fenced
//! block, which [`parse_proposal`] extracts.

use std::fmt::Write as _;
use std::sync::Arc;

use polca_core::oracles::{Embedder, Optimizer, Program, ProposalContext, Summarizer, SummaryPrompt};
use polca_core::{Candidate, OracleError, Task};
use rand::RngCore;

use crate::client::{ChatMessage, LlmClient};
use crate::error::LlmError;
use crate::parse::parse_proposal;

pub const OPTIMIZER_SYSTEM: &str = "You improve the parameter of a program. \
You receive the current parameter, rollouts of the program on sampled tasks with their rewards and feedback, \
and guidance distilled from earlier attempts. Reply with the complete revised parameter inside a single fenced code block.";

fn oracle_error(oracle: &'static str, e: LlmError) -> OracleError {
    OracleError::new(oracle, e.to_string())
}

/// User message for one proposal context.
pub fn proposal_prompt(context: &ProposalContext) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Current parameter:\n<parameter>\n{}\n</parameter>\n", context.seed.payload);
    let _ = writeln!(out, "Rollouts:");
    for (i, (task, obs)) in context.rollouts.iter().enumerate() {
        let _ = writeln!(out, "[{}] Task {}", i + 1, task.id);
        let _ = writeln!(out, "Input: {}", task.input);
        let _ = writeln!(out, "Output: {}", obs.output);
        let _ = writeln!(out, "Reward: {}", obs.reward);
        let _ = writeln!(out, "Feedback: {}\n", obs.feedback);
    }
    if !context.history.trim().is_empty() {
        let _ = writeln!(out, "Guidance from earlier attempts:\n{}\n", context.history.trim());
    }
    out.push_str("Write an improved parameter that raises the reward on tasks like these.");
    out
}

#[derive(Debug, Clone)]
pub struct LlmOptimizer {
    client: Arc<LlmClient>,
}

impl LlmOptimizer {
    pub fn new(client: Arc<LlmClient>) -> Self {
        Self { client }
    }
}

impl Optimizer for LlmOptimizer {
    fn propose(&self, context: &ProposalContext, _rng: &mut dyn RngCore) -> Result<String, OracleError> {
        let messages = [ChatMessage::system(OPTIMIZER_SYSTEM), ChatMessage::user(proposal_prompt(context))];
        let reply = self
            .client
            .chat_complete(&messages)
            .map_err(|e| oracle_error("optimizer", e))?;
        parse_proposal(&reply).map_err(|e| oracle_error("optimizer", e))
    }
}

#[derive(Debug, Clone)]
pub struct LlmSummarizer {
    client: Arc<LlmClient>,
}

impl LlmSummarizer {
    pub fn new(client: Arc<LlmClient>) -> Self {
        Self { client }
    }
}

impl Summarizer for LlmSummarizer {
    fn summarize(&self, prompt: &SummaryPrompt) -> Result<String, OracleError> {
        let messages = [ChatMessage::system(&prompt.system), ChatMessage::user(&prompt.user)];
        self.client
            .chat_complete(&messages)
            .map_err(|e| oracle_error("summarizer", e))
    }
}

#[derive(Debug, Clone)]
pub struct LlmEmbedder {
    client: Arc<LlmClient>,
}

impl LlmEmbedder {
    pub fn new(client: Arc<LlmClient>) -> Self {
        Self { client }
    }
}

impl Embedder for LlmEmbedder {
    fn embed(&self, payload: &str) -> Result<Vec<f64>, OracleError> {
        self.client.embed(payload).map_err(|e| oracle_error("embedder", e))
    }
}

/// A prompted program: the parameter is the system prompt and the task
/// input the user message.
#[derive(Debug, Clone)]
pub struct LlmProgram {
    client: Arc<LlmClient>,
}

impl LlmProgram {
    pub fn new(client: Arc<LlmClient>) -> Self {
        Self { client }
    }
}

impl Program for LlmProgram {
    fn run(&self, candidate: &Candidate, task: &Task, _rng: &mut dyn RngCore) -> Result<String, OracleError> {
        let messages = [ChatMessage::system(&candidate.payload), ChatMessage::user(&task.input)];
        self.client
            .chat_complete(&messages)
            .map_err(|e| oracle_error("program", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use polca_core::{CandidateId, Observation};

    #[test]
    fn prompt_lists_parameter_rollouts_and_history() {
        let mut obs = Observation::new(CandidateId(1), "q1", 0.0);
        obs.output = "Lyon".into();
        obs.feedback = "wrong city".into();
        let ctx = ProposalContext {
            seed: Candidate::new(CandidateId(1), "Answer briefly."),
            rollouts: vec![(Task::new("q1", "Capital of France?"), obs)],
            history: "Be precise.".into(),
        };
        let p = proposal_prompt(&ctx);
        let order = ["Answer briefly.", "Capital of France?", "Lyon", "Reward: 0", "wrong city", "Be precise."];
        let mut last = 0;
        for needle in order {
            let at = p[last..].find(needle).unwrap_or_else(|| panic!("{needle} missing or out of order")) + last;
            last = at;
        }
    }
}
