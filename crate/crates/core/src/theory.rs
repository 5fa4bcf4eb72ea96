//! Monte Carlo checks of the convergence analysis: hitting times of
//! sequential versus best-so-far search, and suboptimal selection counts of a
//! single-select UCB run.
//!
//! Hitting-time walks use the slowest optimizer Assumption-compatible
//! proposals allow: each success lifts the mean by exactly one γ-level, and
//! the walk ends when level `N = B/γ` is reached from level 0.

use std::collections::HashMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{derive_seed, run, Oracles, RunOutcome, SearchConfig};
use crate::error::{Error, Result};
use crate::filter::packing_bound;
use crate::oracles::IdentityProgram;
use crate::strategies::PriorityKind;
use crate::synthetic::{integral_ratio, true_mean_of, FailureMode, SyntheticEnvConfig, SyntheticOracle};
use crate::trace::{EventBody, TraceEvent, TraceSink};
use crate::types::{CandidateId, Task};

pub const STEP_CAP: u64 = 10_000_000;

/// The reward range `[0, B]` cut into intervals of width `γ/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalPartition {
    pub gamma: f64,
    pub cap: f64,
    count: usize,
}

impl IntervalPartition {
    pub fn new(gamma: f64, cap: f64) -> Result<Self> {
        if !(gamma > 0.0 && cap > 0.0 && gamma.is_finite() && cap.is_finite()) {
            return Err(Error::config("gamma", "gamma and reward_cap must be positive"));
        }
        let count = integral_ratio(2.0 * cap, gamma)
            .ok_or_else(|| Error::config("gamma", "reward_cap must be a multiple of gamma/2"))?;
        Ok(Self {
            gamma,
            cap,
            count: count as usize,
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// `I_k = [(k−1)γ/2, kγ/2]` for `k = 1..=len`.
    pub fn interval(&self, k: usize) -> (f64, f64) {
        let w = self.gamma / 2.0;
        ((k as f64 - 1.0) * w, k as f64 * w)
    }

    pub fn intervals(&self) -> Vec<(f64, f64)> {
        (1..=self.count).map(|k| self.interval(k)).collect()
    }

    /// 1-based index of the interval holding `mu`; shared endpoints go to
    /// the lower interval.
    pub fn index_of(&self, mu: f64) -> usize {
        let k = (mu / (self.gamma / 2.0)).ceil();
        (k.max(1.0) as usize).min(self.count)
    }

    pub fn is_suboptimal(&self, mu: f64) -> bool {
        mu <= self.cap - self.gamma
    }
}

/// Bookkeeping thresholds for horizon `n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryQuantities {
    /// `2 ln n / δ₀`
    pub u_interval: f64,
    /// `64 σ² ln n / γ²`
    pub u_single: f64,
    pub n_eps: u64,
}

impl TheoryQuantities {
    pub fn new(n: u64, delta0: f64, sigma: f64, gamma: f64, n_eps: u64) -> Self {
        let ln_n = (n as f64).ln();
        Self {
            u_interval: 2.0 * ln_n / delta0,
            u_single: 64.0 * sigma * sigma * ln_n / (gamma * gamma),
            n_eps,
        }
    }
}

/// Expected steps until `N` consecutive successes of probability `δ₀`.
pub fn sequential_expected_hitting_time(delta0: f64, levels: u64) -> f64 {
    if delta0 >= 1.0 {
        return levels as f64;
    }
    (delta0.powi(-(levels as i32)) - 1.0) / (1.0 - delta0)
}

/// Expected steps for `N` successes of probability `δ₀` that are never lost.
pub fn polca_expected_hitting_time(delta0: f64, levels: u64) -> f64 {
    levels as f64 / delta0
}

/// Steps for a walk that always proposes from its latest iterate. A failed
/// proposal replaces the iterate according to the environment's failure mode.
pub fn hitting_time_sequential(env: &SyntheticEnvConfig, rng: &mut dyn RngCore) -> Result<u64> {
    env.validate()?;
    let n = env.levels()?;
    let mut level = 0u64;
    for step in 1..=STEP_CAP {
        if rng.random::<f64>() < env.delta0 {
            level += 1;
        } else {
            level = match env.failure_mode {
                FailureMode::Stay => level,
                FailureMode::RegressUniform => rng.random_range(0..=level),
                FailureMode::Restart => 0,
            };
        }
        if level >= n {
            return Ok(step);
        }
    }
    Err(Error::NonConvergence(STEP_CAP))
}

/// Steps for a walk that always proposes from the best candidate so far.
/// Failed proposals are drawn (so the random stream matches the sequential
/// walk) but never displace the best.
pub fn hitting_time_polca(env: &SyntheticEnvConfig, rng: &mut dyn RngCore) -> Result<u64> {
    env.validate()?;
    let n = env.levels()?;
    let mut best = 0u64;
    for step in 1..=STEP_CAP {
        if rng.random::<f64>() < env.delta0 {
            best += 1;
        } else {
            let _proposal = match env.failure_mode {
                FailureMode::Stay => best,
                FailureMode::RegressUniform => rng.random_range(0..=best),
                FailureMode::Restart => 0,
            };
        }
        if best >= n {
            return Ok(step);
        }
    }
    Err(Error::NonConvergence(STEP_CAP))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Walk {
    Sequential,
    Polca,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub mean: f64,
    pub stderr: f64,
    pub count: usize,
}

impl SampleStats {
    pub fn from_samples(xs: &[f64]) -> Self {
        let count = xs.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                stderr: f64::NAN,
                count,
            };
        }
        let mean = xs.iter().sum::<f64>() / count as f64;
        let stderr = if count > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            (var / count as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, count }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingTimeEstimate {
    pub walk: Walk,
    pub delta0: f64,
    pub levels: u64,
    pub analytic: f64,
    pub empirical: SampleStats,
}

impl HittingTimeEstimate {
    /// Distance between the empirical and analytic means in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.empirical.mean - self.analytic).abs() / self.empirical.stderr
    }
}

/// Runs independent replicates in parallel; replicate `i` uses a stream
/// seeded from `(seed, i)`, so the estimate does not depend on scheduling.
pub fn estimate_hitting_time(walk: Walk, env: &SyntheticEnvConfig, replicates: usize, seed: u64) -> Result<HittingTimeEstimate> {
    env.validate()?;
    let levels = env.levels()?;
    let samples: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
            match walk {
                Walk::Sequential => hitting_time_sequential(env, &mut rng),
                Walk::Polca => hitting_time_polca(env, &mut rng),
            }
            .map(|t| t as f64)
        })
        .collect::<Result<_>>()?;
    let analytic = match walk {
        Walk::Sequential if env.failure_mode == FailureMode::Restart => sequential_expected_hitting_time(env.delta0, levels),
        // Only the restart walk has a closed form.
        Walk::Sequential => f64::NAN,
        Walk::Polca => polca_expected_hitting_time(env.delta0, levels),
    };
    Ok(HittingTimeEstimate {
        walk,
        delta0: env.delta0,
        levels,
        analytic,
        empirical: SampleStats::from_samples(&samples),
    })
}

/// Counts selections of candidates whose true mean is at most `B − γ`,
/// reading true means from the payloads of inserted candidates.
#[derive(Debug, Clone)]
pub struct SelectionTracker {
    partition: IntervalPartition,
    means: HashMap<CandidateId, f64>,
    suboptimal: u64,
    total: u64,
    per_interval: Vec<u64>,
}

impl SelectionTracker {
    pub fn new(partition: IntervalPartition) -> Self {
        Self {
            partition,
            means: HashMap::new(),
            suboptimal: 0,
            total: 0,
            per_interval: vec![0; partition.len()],
        }
    }

    pub fn suboptimal_selections(&self) -> u64 {
        self.suboptimal
    }

    pub fn total_selections(&self) -> u64 {
        self.total
    }

    /// Selections per interval `I_k`, index `k − 1`.
    pub fn interval_selections(&self) -> &[u64] {
        &self.per_interval
    }

    pub fn observe(&mut self, event: &TraceEvent) -> Result<()> {
        match &event.body {
            EventBody::MemoryUpdate(r) if r.inserted => {
                let payload = r
                    .payload
                    .as_deref()
                    .ok_or_else(|| Error::Trace(format!("insertion of {} has no payload", r.candidate_id)))?;
                let mu = true_mean_of(payload)
                    .map_err(|_| Error::Trace(format!("candidate {} has no true-mean annotation", r.candidate_id)))?;
                self.means.insert(r.candidate_id, mu);
            }
            EventBody::IterationStart { selected, .. } => {
                for s in selected {
                    let mu = *self
                        .means
                        .get(&s.candidate_id)
                        .ok_or_else(|| Error::Trace(format!("selected candidate {} was never inserted", s.candidate_id)))?;
                    self.total += 1;
                    self.per_interval[self.partition.index_of(mu) - 1] += 1;
                    if self.partition.is_suboptimal(mu) {
                        self.suboptimal += 1;
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }
}

impl TraceSink for SelectionTracker {
    fn record(&mut self, event: &TraceEvent) -> Result<()> {
        self.observe(event)
    }
}

pub fn suboptimal_selection_count(events: &[TraceEvent], partition: &IntervalPartition) -> Result<u64> {
    let mut tracker = SelectionTracker::new(*partition);
    for e in events {
        tracker.observe(e)?;
    }
    Ok(tracker.suboptimal_selections())
}

/// Envelope on suboptimal selections over `n` rounds:
/// `(B/(2γδ₀) + 64σ²N_ε/γ²)·ln n`.
pub fn selection_count_bound(env: &SyntheticEnvConfig, n_eps: u64, n: u64) -> f64 {
    let b = env.reward_cap;
    let g = env.gamma;
    (b / (2.0 * g * env.delta0) + 64.0 * env.sigma * env.sigma * n_eps as f64 / (g * g)) * (n as f64).ln()
}

/// A single-select, single-proposal UCB run over a fixed horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleSelectConfig {
    pub env: SyntheticEnvConfig,
    pub horizon: u64,
    pub epsilon: f64,
    pub seed: u64,
}

impl SingleSelectConfig {
    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            batch_size: 1,
            num_batches: 1,
            num_candidates: 1,
            epsilon: self.epsilon,
            priority: PriorityKind::UcbTheory,
            sigma: self.env.sigma,
            horizon: Some(self.horizon),
            budget_metric_calls: 2 * self.horizon,
            max_iterations: Some(self.horizon),
            max_parallel: 1,
            seed: self.seed,
            ..SearchConfig::default()
        }
    }

    /// `N_ε` for embeddings confined to the unit hypercube.
    pub fn n_eps(&self) -> Result<u64> {
        packing_bound(self.epsilon, self.env.embedding_dim, 1.0)
    }
}

pub fn single_select_run(config: &SingleSelectConfig, sink: &mut dyn TraceSink) -> Result<RunOutcome> {
    let oracle = SyntheticOracle::new(config.env.clone())?;
    let oracles = Oracles {
        program: &IdentityProgram,
        guide: &oracle,
        optimizer: &oracle,
        embedder: &oracle,
        summarizer: None,
    };
    let dataset = [Task::new("x", "")];
    run(&config.search_config(), &dataset, &oracle.initial_payload(), &oracles, sink)
}

/// Suboptimal selections of one single-select run, counted while streaming.
pub fn single_select_count(config: &SingleSelectConfig) -> Result<u64> {
    let partition = IntervalPartition::new(config.env.gamma, config.env.reward_cap)?;
    let mut tracker = SelectionTracker::new(partition);
    single_select_run(config, &mut tracker)?;
    Ok(tracker.suboptimal_selections())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::NoiseKind;

    fn env(delta0: f64, gamma: f64) -> SyntheticEnvConfig {
        SyntheticEnvConfig {
            delta0,
            gamma,
            failure_mode: FailureMode::Restart,
            ..Default::default()
        }
    }

    #[test]
    fn partition_tiles_the_range() {
        let p = IntervalPartition::new(0.2, 1.0).unwrap();
        assert_eq!(p.len(), 10);
        let iv = p.intervals();
        assert_eq!(iv[0], (0.0, 0.1));
        assert!((iv[9].1 - 1.0).abs() < 1e-12);
        for w in iv.windows(2) {
            assert!((w[0].1 - w[1].0).abs() < 1e-12);
        }
        assert_eq!(p.index_of(0.0), 1);
        assert_eq!(p.index_of(0.1), 1);
        assert_eq!(p.index_of(0.15), 2);
        assert_eq!(p.index_of(1.0), 10);
        assert!(IntervalPartition::new(0.3, 1.0).is_err());
        assert!(p.is_suboptimal(0.8) && !p.is_suboptimal(0.81));
    }

    #[test]
    fn quantities() {
        let q = TheoryQuantities::new(100, 0.5, 0.5, 0.2, 7);
        let ln = 100f64.ln();
        assert!((q.u_interval - 4.0 * ln).abs() < 1e-12);
        assert!((q.u_single - 400.0 * ln).abs() < 1e-9);
        assert_eq!(q.n_eps, 7);
    }

    #[test]
    fn closed_forms() {
        assert!((sequential_expected_hitting_time(0.5, 5) - 62.0).abs() < 1e-9);
        assert!((sequential_expected_hitting_time(0.5, 10) - 2046.0).abs() < 1e-9);
        assert!((sequential_expected_hitting_time(1.0, 5) - 5.0).abs() < 1e-12);
        assert!((polca_expected_hitting_time(0.8, 5) - 6.25).abs() < 1e-12);
    }

    #[test]
    fn recurrence_matches_closed_form() {
        // E_n = (E_{n-1} + 1)/δ: reach n-1, then one more try; failure restarts.
        for &d in &[0.3, 0.5, 0.8] {
            let mut e = 0.0;
            for n in 1..=12u64 {
                e = (e + 1.0) / d;
                let closed = sequential_expected_hitting_time(d, n);
                assert!((e - closed).abs() <= 1e-9 * closed, "d={d} n={n}");
            }
        }
    }

    #[test]
    fn forced_successes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(hitting_time_sequential(&env(1.0, 0.2), &mut rng).unwrap(), 5);
        assert_eq!(hitting_time_polca(&env(1.0, 0.2), &mut rng).unwrap(), 5);
    }

    #[test]
    fn step_cap_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let e = SyntheticEnvConfig {
            delta0: 0.05,
            gamma: 0.02,
            failure_mode: FailureMode::Restart,
            ..Default::default()
        };
        assert!(matches!(hitting_time_sequential(&e, &mut rng), Err(Error::NonConvergence(_))));
    }

    #[test]
    fn estimates_are_schedule_independent() {
        let a = estimate_hitting_time(Walk::Sequential, &env(0.5, 0.2), 500, 3).unwrap();
        let b = estimate_hitting_time(Walk::Sequential, &env(0.5, 0.2), 500, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn regressions_do_not_slow_best_so_far_search() {
        let mut e = env(0.5, 0.2);
        e.failure_mode = FailureMode::RegressUniform;
        let regress = estimate_hitting_time(Walk::Polca, &e, 10_000, 11).unwrap();
        e.failure_mode = FailureMode::Stay;
        let stay = estimate_hitting_time(Walk::Polca, &e, 10_000, 11).unwrap();
        let se = (regress.empirical.stderr.powi(2) + stay.empirical.stderr.powi(2)).sqrt();
        assert!((regress.empirical.mean - stay.empirical.mean).abs() <= 3.0 * se);
        assert!(regress.z_score() < 3.0);
    }

    #[test]
    fn fit() {
        let xs = [1.0, 2.0, 3.0];
        let f = least_squares(&xs, &[3.0, 5.0, 7.0]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(least_squares(&[1.0], &[1.0]).is_none());
    }

    #[test]
    fn deterministic_single_select_count() {
        let cfg = SingleSelectConfig {
            env: SyntheticEnvConfig {
                delta0: 1.0,
                gamma: 0.2,
                noise: NoiseKind::None,
                embedding_dim: 16,
                ..Default::default()
            },
            horizon: 200,
            epsilon: 0.1,
            seed: 5,
        };
        let mut events = Vec::new();
        single_select_run(&cfg, &mut events).unwrap();
        let partition = IntervalPartition::new(0.2, 1.0).unwrap();
        let count = suboptimal_selection_count(&events, &partition).unwrap();
        assert!(count <= 5, "{count}");
        assert_eq!(count, single_select_count(&cfg).unwrap());
        let iterations = events.iter().filter(|e| matches!(e.body, EventBody::IterationStart { .. })).count();
        assert_eq!(iterations, 200);
    }

    #[test]
    fn count_needs_annotations() {
        let mut events = Vec::new();
        let cfg = SingleSelectConfig {
            env: SyntheticEnvConfig::default(),
            horizon: 5,
            epsilon: 0.0,
            seed: 0,
        };
        single_select_run(&cfg, &mut events).unwrap();
        for e in &mut events {
            if let EventBody::MemoryUpdate(r) = &mut e.body {
                if r.inserted {
                    r.payload = Some("opaque".into());
                }
            }
        }
        let p = IntervalPartition::new(0.2, 1.0).unwrap();
        assert!(suboptimal_selection_count(&events, &p).is_err());
    }
}
