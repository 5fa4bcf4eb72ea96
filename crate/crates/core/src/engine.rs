//! The search loop.
//!
//! Each iteration samples a minibatch, evaluates the top-priority candidates
//! on it, asks the optimizer for one proposal per evaluated candidate, passes
//! the proposals through the ε-net filter, and evaluates the survivors on the
//! same minibatch before they join memory.
//!
//! Every random draw comes from a stream derived from the run seed and the
//! position of the work item (iteration, candidate, batch slot), so results do
//! not depend on how many workers run or in which order they finish.

use std::collections::BTreeSet;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::error::{Error, OracleError, Result};
use crate::filter::{semantic_filter, FilterConfig};
use crate::memory::Memory;
use crate::metrics::MetricCounters;
use crate::oracles::{Embedder, Guide, Optimizer, Program, ProposalContext, Summarizer};
use crate::prompts::{render_trajectories, summarizer_prompt};
use crate::strategies::{select_programs, PriorityConfig, PriorityKind};
use crate::trace::{
    EvaluationRecord, EventBody, FilterDecisionRecord, MemoryUpdateRecord, Phase, ProposalRecord, RunEndRecord,
    SelectedRecord, TraceEvent, TraceSink,
};
use crate::types::{Candidate, CandidateId, Observation, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Minibatch size `B`.
    pub batch_size: usize,
    pub num_batches: usize,
    /// `k`, the number of candidates explored per iteration.
    pub num_candidates: usize,
    pub epsilon: f64,
    pub priority: PriorityKind,
    /// Reward noise scale used by `ucb_theory`.
    pub sigma: f64,
    /// Exploration weight used by `ucb_beta`.
    pub beta: f64,
    /// Fixed `n` for `ucb_theory`; the running sample count when unset.
    pub horizon: Option<u64>,
    pub budget_metric_calls: u64,
    /// Optional cap on the number of iterations.
    pub max_iterations: Option<u64>,
    pub max_parallel: usize,
    pub seed: u64,
    /// Rewards above this count as successes when summarizing history.
    pub summarizer_threshold: f64,
    /// Reward recorded when the program or guide fails on a task.
    pub failure_reward: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            num_batches: 1,
            num_candidates: 5,
            epsilon: 0.1,
            priority: PriorityKind::Mean,
            sigma: 0.0,
            beta: 1.0,
            horizon: None,
            budget_metric_calls: 1000,
            max_iterations: None,
            max_parallel: 10,
            seed: 0,
            summarizer_threshold: 0.5,
            failure_reward: 0.0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: u64| {
            if v == 0 {
                Err(Error::config(field, "must be positive"))
            } else {
                Ok(())
            }
        };
        positive("batch_size", self.batch_size as u64)?;
        positive("num_batches", self.num_batches as u64)?;
        positive("num_candidates", self.num_candidates as u64)?;
        positive("budget_metric_calls", self.budget_metric_calls)?;
        positive("max_parallel", self.max_parallel as u64)?;
        if self.max_iterations == Some(0) {
            return Err(Error::config("max_iterations", "must be positive when set"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::config("epsilon", format!("must be a finite value >= 0, got {}", self.epsilon)));
        }
        if !self.summarizer_threshold.is_finite() {
            return Err(Error::config("summarizer_threshold", "must be finite"));
        }
        if !self.failure_reward.is_finite() {
            return Err(Error::config("failure_reward", "must be finite"));
        }
        self.priority_config().validate()
    }

    pub fn priority_config(&self) -> PriorityConfig {
        PriorityConfig {
            kind: self.priority,
            sigma: self.sigma,
            beta: self.beta,
            horizon: self.horizon,
            k: self.num_candidates,
        }
    }

    /// Tasks evaluated per candidate in one iteration.
    pub fn tasks_per_iteration(&self) -> u64 {
        self.batch_size as u64 * self.num_batches as u64
    }
}

/// Purposes of derived random streams.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Stream {
    Minibatch = 1,
    Evaluate = 2,
    Propose = 3,
    Summarize = 4,
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the `index`-th independent replicate of an experiment.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}

fn stream(seed: u64, purpose: Stream, parts: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &p in parts {
        h = splitmix64(h ^ p);
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Draws `batch_size` tasks uniformly with replacement, in draw order.
///
/// Each index is `⌊u·len / 2⁶⁴⌋` for a fresh 64-bit draw `u`.
pub fn sample_minibatch(dataset: &[Task], batch_size: usize, rng: &mut dyn RngCore) -> Result<Vec<Task>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if batch_size == 0 {
        return Err(Error::ZeroBatchSize);
    }
    let len = dataset.len() as u128;
    Ok((0..batch_size)
        .map(|_| {
            let i = ((rng.next_u64() as u128 * len) >> 64) as usize;
            dataset[i].clone()
        })
        .collect())
}

/// Runs work items serially or on a bounded pool.
pub struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub fn new(max_parallel: usize) -> Result<Self> {
        if max_parallel <= 1 {
            return Ok(Self::serial());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(max_parallel)
            .build()
            .map_err(|e| Error::config("max_parallel", e.to_string()))?;
        Ok(Self { pool: Some(pool) })
    }

    pub fn serial() -> Self {
        Self { pool: None }
    }

    /// Maps `f` over `items`, preserving input order in the output.
    pub fn map<T, R, F>(&self, items: &[T], parallel: bool, f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match &self.pool {
            Some(pool) if parallel && items.len() > 1 => {
                pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect())
            }
            _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        }
    }
}

/// Identifies an evaluate call for stream derivation.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext {
    pub seed: u64,
    pub iteration: u64,
    pub phase: Phase,
    pub failure_reward: f64,
}

/// An observation together with the batch position of its task.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub slot: usize,
    pub observation: Observation,
}

fn rollout(
    program: &dyn Program,
    guide: &dyn Guide,
    candidate: &Candidate,
    task: &Task,
    rng: &mut dyn RngCore,
) -> std::result::Result<(String, f64, String), (String, OracleError)> {
    let output = program.run(candidate, task, rng).map_err(|e| (String::new(), e))?;
    match guide.score(task, &output, rng) {
        Ok(s) if s.reward.is_finite() => Ok((output, s.reward, s.feedback)),
        Ok(s) => Err((output, OracleError::new("guide", format!("non-finite reward {}", s.reward)))),
        Err(e) => Err((output, e)),
    }
}

/// Runs every candidate on every task of the batch.
///
/// Failed rollouts become observations carrying the failure reward and the
/// error text; the call fails only when every rollout failed. Results are
/// ordered by candidate id, then task id, then batch slot.
pub fn evaluate(
    candidates: &[Candidate],
    batch: &[Task],
    program: &dyn Program,
    guide: &dyn Guide,
    ctx: &EvalContext,
    exec: &Executor,
    counters: &mut MetricCounters,
) -> Result<Vec<Evaluated>> {
    if candidates.is_empty() || batch.is_empty() {
        return Err(Error::NothingToDo("evaluate"));
    }
    let items: Vec<(usize, usize)> = (0..candidates.len())
        .flat_map(|c| (0..batch.len()).map(move |s| (c, s)))
        .collect();
    let parallel = program.concurrent() && guide.concurrent();
    let phase_tag = match ctx.phase {
        Phase::Explore => 0,
        Phase::New => 1,
    };
    let results = exec.map(&items, parallel, |_, &(c, slot)| {
        let candidate = &candidates[c];
        let task = &batch[slot];
        let mut rng = stream(
            ctx.seed,
            Stream::Evaluate,
            &[ctx.iteration, phase_tag, candidate.id.0, slot as u64],
        );
        let mut obs = Observation::new(candidate.id, task.id.clone(), ctx.failure_reward).at_iteration(ctx.iteration);
        let failure = match rollout(program, guide, candidate, task, &mut rng) {
            Ok((output, reward, feedback)) => {
                obs.output = output;
                obs.reward = reward;
                obs.feedback = feedback;
                None
            }
            Err((output, err)) => {
                warn!(candidate = %candidate.id, task = %task.id, error = %err, "rollout failed");
                obs.output = output;
                obs.feedback = err.to_string();
                obs.failed = true;
                Some(err)
            }
        };
        (Evaluated { slot, observation: obs }, failure)
    });

    counters.metric_calls += items.len() as u64;
    counters.evaluation_steps += 1;

    let mut first_error = None;
    let mut out = Vec::with_capacity(results.len());
    let mut any_ok = false;
    for (ev, failure) in results {
        match failure {
            Some(e) if first_error.is_none() => first_error = Some(e),
            Some(_) => {}
            None => any_ok = true,
        }
        out.push(ev);
    }
    if !any_ok {
        return Err(Error::BatchFailed(first_error.expect("all rollouts failed")));
    }
    out.sort_by(|a, b| {
        a.observation
            .candidate_id
            .cmp(&b.observation.candidate_id)
            .then_with(|| a.observation.task_id.cmp(&b.observation.task_id))
            .then(a.slot.cmp(&b.slot))
    });
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct ProposeSettings {
    pub seed: u64,
    pub iteration: u64,
    /// Embedding length every proposal must match.
    pub dimension: Option<usize>,
}

/// Result of one optimizer call.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalOutcome {
    pub parent_id: CandidateId,
    pub result: std::result::Result<Candidate, OracleError>,
}

fn check_embedding(embedding: &[f64], dimension: Option<usize>) -> std::result::Result<(), OracleError> {
    if let Some(d) = dimension {
        if embedding.len() != d {
            return Err(OracleError::new(
                "embedder",
                format!("embedding has dimension {}, expected {d}", embedding.len()),
            ));
        }
    }
    if embedding.is_empty() || embedding.iter().any(|x| !x.is_finite()) {
        return Err(OracleError::new("embedder", "embedding is empty or not finite"));
    }
    Ok(())
}

/// Calls the optimizer once per context and embeds every proposal.
///
/// Ids are handed out to successful proposals in context order starting at
/// `next_id`. A failed optimizer or embedder call yields an error outcome for
/// that context only.
pub fn propose_programs(
    optimizer: &dyn Optimizer,
    embedder: &dyn Embedder,
    contexts: &[ProposalContext],
    settings: &ProposeSettings,
    exec: &Executor,
    next_id: &mut u64,
    counters: &mut MetricCounters,
) -> Result<Vec<ProposalOutcome>> {
    if contexts.is_empty() {
        return Err(Error::NothingToDo("propose"));
    }
    if let Some(ctx) = contexts.iter().find(|c| c.rollouts.is_empty()) {
        return Err(Error::config(
            "explored",
            format!("candidate {} has no rollouts this iteration", ctx.seed.id),
        ));
    }
    let parallel = optimizer.concurrent() && embedder.concurrent();
    let raw = exec.map(contexts, parallel, |pos, ctx| {
        let mut rng = stream(settings.seed, Stream::Propose, &[settings.iteration, pos as u64]);
        let payload = optimizer.propose(ctx, &mut rng)?;
        if payload.trim().is_empty() {
            return Err(OracleError::new("optimizer", "empty proposal"));
        }
        let embedding = embedder.embed(&payload)?;
        check_embedding(&embedding, settings.dimension)?;
        Ok((payload, embedding))
    });

    counters.proposal_steps += 1;
    let mut outcomes = Vec::with_capacity(raw.len());
    for (ctx, r) in contexts.iter().zip(raw) {
        let parent = ctx.seed.id;
        let result = r.map(|(payload, embedding)| {
            let id = CandidateId(*next_id);
            *next_id += 1;
            counters.proposals += 1;
            Candidate::new(id, payload)
                .with_embedding(embedding)
                .with_parent(parent, settings.iteration)
        });
        if let Err(e) = &result {
            warn!(parent = %parent, error = %e, "proposal failed");
        }
        outcomes.push(ProposalOutcome { parent_id: parent, result });
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOutcome {
    pub text: String,
    pub error: Option<String>,
}

/// Builds the history context from every entry's contrastive trajectories.
/// A failing summarizer yields empty guidance rather than aborting.
pub fn summarize(
    memory: &Memory,
    tasks: &[Task],
    threshold: f64,
    rng: &mut dyn RngCore,
    summarizer: &dyn Summarizer,
) -> SummaryOutcome {
    let digest = render_trajectories(memory, tasks, threshold, rng);
    match summarizer.summarize(&summarizer_prompt(&digest)) {
        Ok(text) => SummaryOutcome { text, error: None },
        Err(e) => {
            warn!(error = %e, "summarizer failed");
            SummaryOutcome {
                text: String::new(),
                error: Some(e.to_string()),
            }
        }
    }
}

/// The external oracles a run talks to. Without a summarizer the history
/// context is left empty.
#[derive(Clone, Copy)]
pub struct Oracles<'a> {
    pub program: &'a dyn Program,
    pub guide: &'a dyn Guide,
    pub optimizer: &'a dyn Optimizer,
    pub embedder: &'a dyn Embedder,
    pub summarizer: Option<&'a dyn Summarizer>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub best: Candidate,
    pub best_mean: f64,
    pub memory: Memory,
    pub counters: MetricCounters,
    pub iterations: u64,
}

struct Tracer<'s> {
    sink: &'s mut dyn TraceSink,
    seq: u64,
}

impl Tracer<'_> {
    fn emit(&mut self, iteration: u64, body: EventBody) -> Result<()> {
        let event = TraceEvent {
            seq: self.seq,
            iteration,
            body,
        };
        self.seq += 1;
        self.sink.record(&event)
    }

    fn evaluations(&mut self, iteration: u64, phase: Phase, eval_step: u64, evaluated: &[Evaluated]) -> Result<()> {
        for ev in evaluated {
            let o = &ev.observation;
            self.emit(
                iteration,
                EventBody::Evaluation(EvaluationRecord {
                    phase,
                    eval_step,
                    slot: ev.slot,
                    candidate_id: o.candidate_id,
                    task_id: o.task_id.clone(),
                    output: o.output.clone(),
                    reward: o.reward,
                    feedback: o.feedback.clone(),
                    failed: o.failed,
                }),
            )?;
        }
        Ok(())
    }

    fn stats(&mut self, iteration: u64, memory: &Memory, evaluated: &[Evaluated]) -> Result<()> {
        let ids: BTreeSet<CandidateId> = evaluated.iter().map(|e| e.observation.candidate_id).collect();
        for id in ids {
            let entry = memory.get(id).ok_or(Error::UnknownCandidate(id))?;
            self.emit(
                iteration,
                EventBody::MemoryUpdate(MemoryUpdateRecord {
                    candidate_id: id,
                    inserted: false,
                    parent_id: None,
                    payload: None,
                    sample_count: entry.sample_count(),
                    mean: entry.mean(),
                }),
            )?;
        }
        Ok(())
    }

    fn inserted(&mut self, iteration: u64, candidate: &Candidate) -> Result<()> {
        self.emit(
            iteration,
            EventBody::MemoryUpdate(MemoryUpdateRecord {
                candidate_id: candidate.id,
                inserted: true,
                parent_id: candidate.parent_id,
                payload: Some(candidate.payload.clone()),
                sample_count: 0,
                mean: None,
            }),
        )
    }
}

/// Runs the search until the next iteration's worst-case cost,
/// `2·|explored|·B·num_batches` metric calls, no longer fits the budget.
///
/// If not even the first full iteration fits but the seed's evaluation does,
/// the seed is evaluated once and returned.
pub fn run(
    config: &SearchConfig,
    dataset: &[Task],
    initial_payload: &str,
    oracles: &Oracles<'_>,
    sink: &mut dyn TraceSink,
) -> Result<RunOutcome> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let per_candidate = config.tasks_per_iteration();
    if config.budget_metric_calls < per_candidate {
        return Err(Error::BudgetTooSmall {
            budget: config.budget_metric_calls,
            needed: per_candidate,
        });
    }
    let priority = config.priority_config();
    let exec = Executor::new(config.max_parallel)?;
    let mut tracer = Tracer { sink, seq: 0 };
    let mut memory = Memory::new(format!("run-{:016x}", config.seed));
    let mut counters = MetricCounters::default();

    let seed_embedding = oracles.embedder.embed(initial_payload)?;
    check_embedding(&seed_embedding, None)?;
    let filter = FilterConfig::new(config.epsilon, seed_embedding.len())?;
    let seed_candidate = Candidate::new(CandidateId(0), initial_payload).with_embedding(seed_embedding);
    tracer.inserted(0, &seed_candidate)?;
    memory.insert(seed_candidate)?;
    let mut next_id = 1u64;

    let mut iteration = 0u64;
    loop {
        if config.max_iterations.is_some_and(|m| iteration >= m) {
            break;
        }
        let selected: Vec<(Candidate, f64)> = select_programs(&memory, &priority)?
            .into_iter()
            .map(|r| (r.candidate.clone(), r.priority))
            .collect();
        let explore_cost = selected.len() as u64 * per_candidate;
        let remaining = config.budget_metric_calls - counters.metric_calls;
        let explore_only = if 2 * explore_cost <= remaining {
            false
        } else if iteration == 0 && explore_cost <= remaining {
            true
        } else {
            break;
        };
        iteration += 1;

        let mut batch_rng = stream(config.seed, Stream::Minibatch, &[iteration]);
        let batch = sample_minibatch(dataset, per_candidate as usize, &mut batch_rng)?;
        tracer.emit(
            iteration,
            EventBody::IterationStart {
                batch: batch.iter().map(|t| t.id.clone()).collect(),
                selected: selected
                    .iter()
                    .map(|(c, p)| SelectedRecord {
                        candidate_id: c.id,
                        priority: *p,
                    })
                    .collect(),
                counters,
            },
        )?;
        debug!(iteration, selected = selected.len(), "iteration start");

        let explored: Vec<Candidate> = selected.into_iter().map(|(c, _)| c).collect();
        let mut eval_ctx = EvalContext {
            seed: config.seed,
            iteration,
            phase: Phase::Explore,
            failure_reward: config.failure_reward,
        };
        let evaluated = evaluate(&explored, &batch, oracles.program, oracles.guide, &eval_ctx, &exec, &mut counters)?;
        tracer.evaluations(iteration, Phase::Explore, counters.evaluation_steps, &evaluated)?;
        memory.update_stats(evaluated.iter().map(|e| e.observation.clone()))?;
        tracer.stats(iteration, &memory, &evaluated)?;
        if explore_only {
            break;
        }

        let history = match oracles.summarizer {
            Some(s) => {
                let mut rng = stream(config.seed, Stream::Summarize, &[iteration]);
                let outcome = summarize(&memory, dataset, config.summarizer_threshold, &mut rng, s);
                tracer.emit(
                    iteration,
                    EventBody::Summary {
                        text: outcome.text.clone(),
                        error: outcome.error,
                    },
                )?;
                outcome.text
            }
            None => String::new(),
        };

        let contexts: Vec<ProposalContext> = explored
            .iter()
            .map(|c| ProposalContext {
                seed: c.clone(),
                rollouts: evaluated
                    .iter()
                    .filter(|e| e.observation.candidate_id == c.id)
                    .map(|e| (batch[e.slot].clone(), e.observation.clone()))
                    .collect(),
                history: history.clone(),
            })
            .collect();
        let settings = ProposeSettings {
            seed: config.seed,
            iteration,
            dimension: Some(filter.dimension),
        };
        let outcomes = propose_programs(
            oracles.optimizer,
            oracles.embedder,
            &contexts,
            &settings,
            &exec,
            &mut next_id,
            &mut counters,
        )?;
        let mut raw = Vec::new();
        for o in outcomes {
            let record = match &o.result {
                Ok(c) => ProposalRecord {
                    proposal_step: counters.proposal_steps,
                    parent_id: o.parent_id,
                    candidate_id: Some(c.id),
                    payload: Some(c.payload.clone()),
                    error: None,
                },
                Err(e) => ProposalRecord {
                    proposal_step: counters.proposal_steps,
                    parent_id: o.parent_id,
                    candidate_id: None,
                    payload: None,
                    error: Some(e.to_string()),
                },
            };
            tracer.emit(iteration, EventBody::Proposal(record))?;
            if let Ok(c) = o.result {
                raw.push(c);
            }
        }

        let filtered = semantic_filter(raw, &memory, &filter)?;
        for d in &filtered.decisions {
            tracer.emit(
                iteration,
                EventBody::FilterDecision(FilterDecisionRecord {
                    candidate_id: d.candidate_id,
                    accepted: d.accepted,
                    min_distance: d.min_distance,
                    epsilon: filter.epsilon,
                }),
            )?;
        }
        if filtered.accepted.is_empty() {
            continue;
        }
        let fresh = filtered.accepted;
        for c in &fresh {
            tracer.inserted(iteration, c)?;
            memory.insert(c.clone())?;
        }
        eval_ctx.phase = Phase::New;
        let evaluated = evaluate(&fresh, &batch, oracles.program, oracles.guide, &eval_ctx, &exec, &mut counters)?;
        tracer.evaluations(iteration, Phase::New, counters.evaluation_steps, &evaluated)?;
        memory.update_stats(evaluated.iter().map(|e| e.observation.clone()))?;
        tracer.stats(iteration, &memory, &evaluated)?;
    }

    let best_entry = memory.best_entry()?;
    let best = best_entry.candidate.clone();
    let best_mean = best_entry.mean().ok_or(Error::NoSampledEntries)?;
    tracer.emit(
        iteration,
        EventBody::RunEnd(RunEndRecord {
            counters,
            best_candidate_id: best.id,
            best_mean,
            best_payload: best.payload.clone(),
            iterations: iteration,
        }),
    )?;
    Ok(RunOutcome {
        best,
        best_mean,
        memory,
        counters,
        iterations: iteration,
    })
}
