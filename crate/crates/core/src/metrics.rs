//! Budget counters and best-so-far curves along the four cost axes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{EventBody, TraceEvent};
use crate::types::CandidateId;

/// Running totals of the four cost axes: guide invocations, evaluate rounds,
/// optimizer successes, and propose rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounters {
    pub metric_calls: u64,
    pub evaluation_steps: u64,
    pub proposals: u64,
    pub proposal_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    EvaluationStep,
    MetricCall,
    ProposalStep,
    Proposal,
}

impl StepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StepKind::EvaluationStep => "evaluation_step",
            StepKind::MetricCall => "metric_call",
            StepKind::ProposalStep => "proposal_step",
            StepKind::Proposal => "proposal",
        }
    }
}

/// One point of a best-so-far curve. Column order is the CSV layout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step_kind: StepKind,
    pub step_index: u64,
    pub best_score: f64,
}

/// Rebuilds the counters from evaluation and proposal events alone.
pub fn reconstruct_counters(events: &[TraceEvent]) -> MetricCounters {
    let mut eval_steps = BTreeSet::new();
    let mut proposal_steps = BTreeSet::new();
    let mut c = MetricCounters::default();
    for e in events {
        match &e.body {
            EventBody::Evaluation(r) => {
                c.metric_calls += 1;
                eval_steps.insert(r.eval_step);
            }
            EventBody::Proposal(r) => {
                proposal_steps.insert(r.proposal_step);
                if r.ok() {
                    c.proposals += 1;
                }
            }
            _ => {}
        }
    }
    c.evaluation_steps = eval_steps.len() as u64;
    c.proposal_steps = proposal_steps.len() as u64;
    c
}

#[derive(Default)]
struct BestTracker {
    means: BTreeMap<CandidateId, f64>,
    best: Option<f64>,
}

impl BestTracker {
    fn update(&mut self, id: CandidateId, mean: Option<f64>) {
        match mean {
            Some(m) => {
                self.means.insert(id, m);
            }
            None => {
                self.means.remove(&id);
            }
        }
        self.best = self.means.values().copied().reduce(f64::max);
    }
}

/// Best-so-far curves against evaluation steps, metric calls, proposal steps
/// and proposals.
///
/// Every metric call of one evaluate round reports the best empirical mean
/// after that round's statistics update; proposals report the best at the end
/// of their iteration.
pub fn metrics_curves(events: &[TraceEvent]) -> Result<Vec<MetricsRow>> {
    match events.last() {
        Some(TraceEvent {
            body: EventBody::RunEnd(_),
            ..
        }) => {}
        _ => return Err(Error::Trace("trace does not end with run_end".into())),
    }

    let mut tracker = BestTracker::default();
    let mut axes: [Vec<MetricsRow>; 4] = Default::default();
    let mut pending_steps: Vec<u64> = Vec::new();
    let mut pending_calls = 0u64;
    let mut pending_proposal_steps: Vec<u64> = Vec::new();
    let mut pending_proposals = 0u64;
    let mut counters = MetricCounters::default();

    let push = |axes: &mut [Vec<MetricsRow>; 4], kind: StepKind, index: u64, best: Option<f64>| -> Result<()> {
        let best_score = best.ok_or_else(|| Error::Trace("step recorded before any candidate was sampled".into()))?;
        let slot = match kind {
            StepKind::EvaluationStep => 0,
            StepKind::MetricCall => 1,
            StepKind::ProposalStep => 2,
            StepKind::Proposal => 3,
        };
        axes[slot].push(MetricsRow {
            step_kind: kind,
            step_index: index,
            best_score,
        });
        Ok(())
    };

    let flush_evals = |axes: &mut [Vec<MetricsRow>; 4],
                           tracker: &BestTracker,
                           pending_steps: &mut Vec<u64>,
                           pending_calls: &mut u64,
                           counters: &mut MetricCounters|
     -> Result<()> {
        for _ in pending_steps.drain(..) {
            counters.evaluation_steps += 1;
            push(axes, StepKind::EvaluationStep, counters.evaluation_steps, tracker.best)?;
        }
        for _ in 0..*pending_calls {
            counters.metric_calls += 1;
            push(axes, StepKind::MetricCall, counters.metric_calls, tracker.best)?;
        }
        *pending_calls = 0;
        Ok(())
    };

    for event in events {
        match &event.body {
            EventBody::Evaluation(r) => {
                if pending_steps.last() != Some(&r.eval_step) {
                    pending_steps.push(r.eval_step);
                }
                pending_calls += 1;
            }
            EventBody::MemoryUpdate(r) => {
                tracker.update(r.candidate_id, r.mean);
            }
            other => {
                flush_evals(&mut axes, &tracker, &mut pending_steps, &mut pending_calls, &mut counters)?;
                match other {
                    EventBody::Proposal(r) => {
                        if pending_proposal_steps.last() != Some(&r.proposal_step) {
                            pending_proposal_steps.push(r.proposal_step);
                        }
                        if r.ok() {
                            pending_proposals += 1;
                        }
                    }
                    EventBody::IterationStart { .. } | EventBody::RunEnd(_) => {
                        for _ in pending_proposal_steps.drain(..) {
                            counters.proposal_steps += 1;
                            push(&mut axes, StepKind::ProposalStep, counters.proposal_steps, tracker.best)?;
                        }
                        for _ in 0..pending_proposals {
                            counters.proposals += 1;
                            push(&mut axes, StepKind::Proposal, counters.proposals, tracker.best)?;
                        }
                        pending_proposals = 0;
                    }
                    _ => {}
                }
            }
        }
    }
    Ok(axes.into_iter().flatten().collect())
}
