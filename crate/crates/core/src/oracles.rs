//! Interfaces to the external oracles the search coordinates: the program
//! under optimization, the guide that scores it, the optimizer that proposes
//! new parameters, the embedder, and the history summarizer.
//!
//! Every oracle may be called from several worker threads at once unless it
//! reports `concurrent() == false`, in which case the engine serializes its
//! calls.

use rand::RngCore;

use crate::error::OracleError;
use crate::types::{Candidate, Observation, Task};

/// Runs a parameterized program: `y ~ P_θ(x)`.
pub trait Program: Send + Sync {
    fn run(&self, candidate: &Candidate, task: &Task, rng: &mut dyn RngCore) -> Result<String, OracleError>;

    fn concurrent(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuideScore {
    pub reward: f64,
    pub feedback: String,
}

/// Scores a program output against its task: returns `(r, f)`.
pub trait Guide: Send + Sync {
    fn score(&self, task: &Task, output: &str, rng: &mut dyn RngCore) -> Result<GuideScore, OracleError>;

    fn concurrent(&self) -> bool {
        true
    }
}

/// Local context for one proposal: the seed candidate, its rollouts from the
/// current iteration, and the shared history summary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalContext {
    pub seed: Candidate,
    pub rollouts: Vec<(Task, Observation)>,
    pub history: String,
}

/// Proposes a new parameter payload from a context.
pub trait Optimizer: Send + Sync {
    fn propose(&self, context: &ProposalContext, rng: &mut dyn RngCore) -> Result<String, OracleError>;

    fn concurrent(&self) -> bool {
        true
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, payload: &str) -> Result<Vec<f64>, OracleError>;

    fn concurrent(&self) -> bool {
        true
    }
}

/// Chat-style prompt handed to a summarizer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryPrompt {
    pub system: String,
    pub user: String,
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, prompt: &SummaryPrompt) -> Result<String, OracleError>;
}

/// `P_θ(x) = θ`: the parameter is the whole program output.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityProgram;

impl Program for IdentityProgram {
    fn run(&self, candidate: &Candidate, _task: &Task, _rng: &mut dyn RngCore) -> Result<String, OracleError> {
        Ok(candidate.payload.clone())
    }
}

/// Returns the rendered trajectory digest unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentitySummarizer;

impl Summarizer for IdentitySummarizer {
    fn summarize(&self, prompt: &SummaryPrompt) -> Result<String, OracleError> {
        Ok(prompt.user.clone())
    }
}

/// Binary reward: 1 when the normalized output equals or contains the task's
/// reference answer (held in `side_info`), 0 otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReferenceGuide;

fn normalize_answer(text: &str) -> String {
    text.trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

impl Guide for ReferenceGuide {
    fn score(&self, task: &Task, output: &str, _rng: &mut dyn RngCore) -> Result<GuideScore, OracleError> {
        let reference = normalize_answer(&task.side_info);
        if reference.is_empty() {
            return Err(OracleError::new(
                "guide",
                format!("task {} has no reference answer", task.id),
            ));
        }
        let got = normalize_answer(output);
        let hit = got == reference || got.contains(&reference);
        let feedback = if hit {
            format!("Correct: the answer matches the reference for task {}.", task.id)
        } else {
            format!(
                "Incorrect for task {}: expected an answer matching \"{}\".",
                task.id, task.side_info
            )
        };
        Ok(GuideScore {
            reward: if hit { 1.0 } else { 0.0 },
            feedback,
        })
    }
}
