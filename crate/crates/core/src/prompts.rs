//! Rendering of the history summarizer prompt.
//!
//! Each sampled memory entry contributes its parameter plus at most one
//! successful (`r > τ`) and one failed (`r ≤ τ`) trajectory.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, RngCore};

use crate::memory::{Memory, MemoryEntry};
use crate::oracles::SummaryPrompt;
use crate::types::{Observation, Task};

pub const SUMMARIZER_SYSTEM: &str = "You are an expert at analyzing program behavior patterns and providing actionable guidance for parameter optimization.";

const SUMMARIZER_INTRO: &str = "Analyze the following program rollout trajectories and extract insights for optimization. For each program, a successful and a failed trajectory are provided for contrastive analysis.";

const SUMMARIZER_FORMAT: &str = "Provide your analysis in XML format:
- <reasoning> Analyze the key patterns and strategies that led to success or failure in these trajectories. </reasoning>
- <summary> Concrete recommendations for improving output quality based on successful or failed patterns observed. </summary>";

/// Wraps rendered trajectories into the summarizer's system/user messages.
pub fn summarizer_prompt(trajectories: &str) -> SummaryPrompt {
    SummaryPrompt {
        system: SUMMARIZER_SYSTEM.to_string(),
        user: format!("{SUMMARIZER_INTRO}\n\nTrajectories:\n{trajectories}\n\n{SUMMARIZER_FORMAT}"),
    }
}

/// One success and one failure per entry, picked uniformly.
pub fn contrastive_pairs<'a>(
    entry: &'a MemoryEntry,
    threshold: f64,
    rng: &mut dyn RngCore,
) -> (Option<&'a Observation>, Option<&'a Observation>) {
    let (wins, losses): (Vec<&Observation>, Vec<&Observation>) =
        entry.observations().iter().partition(|o| o.reward > threshold);
    let mut pick = |pool: &[&'a Observation]| {
        if pool.is_empty() {
            None
        } else {
            Some(pool[rng.random_range(0..pool.len())])
        }
    };
    let success = pick(&wins);
    let failure = pick(&losses);
    (success, failure)
}

fn write_trajectory(out: &mut String, label: &str, obs: &Observation, tasks: &HashMap<&str, &Task>) {
    let input = tasks.get(obs.task_id.as_str()).map(|t| t.input.as_str()).unwrap_or("");
    let _ = writeln!(out, "{label} trajectory (reward {:.4}):", obs.reward);
    let _ = writeln!(out, "  Task: {}", obs.task_id);
    let _ = writeln!(out, "  Input: {input}");
    let _ = writeln!(out, "  Output: {}", obs.output);
    let _ = writeln!(out, "  Feedback: {}", obs.feedback);
}

/// Renders the trajectory digest for every sampled entry, in id order.
pub fn render_trajectories(memory: &Memory, tasks: &[Task], threshold: f64, rng: &mut dyn RngCore) -> String {
    let by_id: HashMap<&str, &Task> = tasks.iter().map(|t| (t.id.as_str(), t)).collect();
    let mut out = String::new();
    for entry in memory.entries().filter(|e| e.is_sampled()) {
        let (success, failure) = contrastive_pairs(entry, threshold, rng);
        let _ = writeln!(out, "Program {} (mean reward {:.4} over {} samples):", entry.id(), entry.mean().unwrap_or(0.0), entry.sample_count());
        let _ = writeln!(out, "<parameter>\n{}\n</parameter>", entry.candidate.payload);
        if let Some(o) = success {
            write_trajectory(&mut out, "Successful", o, &by_id);
        }
        if let Some(o) = failure {
            write_trajectory(&mut out, "Failed", o, &by_id);
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}
