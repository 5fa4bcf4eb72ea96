//! Domain records shared by every stage of the search.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Identity of a candidate within one run. Ids are handed out in
/// increasing order, so they also order candidates by creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CandidateId(pub u64);

impl fmt::Display for CandidateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.0)
    }
}

/// A program parameter under optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: CandidateId,
    /// The parameter itself: a prompt, a program, or any string.
    pub payload: String,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
    #[serde(default)]
    pub parent_id: Option<CandidateId>,
    /// Iteration at which the candidate was created (0 for the seed).
    pub created_at: u64,
}

impl Candidate {
    pub fn new(id: CandidateId, payload: impl Into<String>) -> Self {
        Self {
            id,
            payload: payload.into(),
            embedding: None,
            parent_id: None,
            created_at: 0,
        }
    }

    pub fn with_embedding(mut self, embedding: Vec<f64>) -> Self {
        self.embedding = Some(embedding);
        self
    }

    pub fn with_parent(mut self, parent: CandidateId, created_at: u64) -> Self {
        self.parent_id = Some(parent);
        self.created_at = created_at;
        self
    }
}

/// One data point `(x, ω)` of the task distribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub input: String,
    #[serde(default)]
    pub side_info: String,
}

impl Task {
    pub fn new(id: impl Into<String>, input: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            input: input.into(),
            side_info: String::new(),
        }
    }

    pub fn with_side_info(mut self, side_info: impl Into<String>) -> Self {
        self.side_info = side_info.into();
        self
    }
}

/// A single rollout of a candidate on a task, scored by the guide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub candidate_id: CandidateId,
    pub task_id: String,
    pub output: String,
    pub reward: f64,
    pub feedback: String,
    pub iteration: u64,
    /// Set when the guide failed and `reward` is the configured failure reward.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub failed: bool,
}

impl Observation {
    pub fn new(candidate_id: CandidateId, task_id: impl Into<String>, reward: f64) -> Self {
        Self {
            candidate_id,
            task_id: task_id.into(),
            output: String::new(),
            reward,
            feedback: String::new(),
            iteration: 0,
            failed: false,
        }
    }

    pub fn at_iteration(mut self, iteration: u64) -> Self {
        self.iteration = iteration;
        self
    }
}
