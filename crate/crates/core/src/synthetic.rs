//! A synthetic environment with known true means, used to check the search
//! against closed-form predictions.
//!
//! A synthetic candidate's payload carries its true mean, `mu=<value>;n=<nonce>`.
//! With the identity program the guide sees that payload as the program output.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, OracleError, Result};
use crate::oracles::{Embedder, Guide, GuideScore, Optimizer, ProposalContext};
use crate::types::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Gaussian,
    Bernoulli,
}

/// How synthetic payloads map to embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Every coordinate is hash-derived.
    Hashed,
    /// The first coordinate is `μ/B`, the rest hash-derived, so candidates
    /// whose means differ by `Δ` sit at least `Δ/B` apart.
    MeanAligned,
}

/// What a non-improving proposal looks like.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// The proposal keeps the seed's mean.
    Stay,
    /// The proposal's mean is uniform on `[0, μ]`.
    RegressUniform,
    /// The proposal falls back to mean 0.
    Restart,
}

macro_rules! snake_case_from_str {
    ($ty:ty, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    other => Err(Error::config(
                        stringify!($ty),
                        format!("unknown value {other:?}, expected one of: {}", [$($name),+].join(", ")),
                    )),
                }
            }
        }
    };
}

snake_case_from_str!(NoiseKind, "none" => NoiseKind::None, "gaussian" => NoiseKind::Gaussian, "bernoulli" => NoiseKind::Bernoulli);
snake_case_from_str!(EmbeddingKind, "hashed" => EmbeddingKind::Hashed, "mean_aligned" => EmbeddingKind::MeanAligned);
snake_case_from_str!(
    FailureMode,
    "stay" => FailureMode::Stay,
    "regress_uniform" => FailureMode::RegressUniform,
    "restart" => FailureMode::Restart,
);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticEnvConfig {
    pub reward_cap: f64,
    pub gamma: f64,
    pub delta0: f64,
    pub sigma: f64,
    pub noise: NoiseKind,
    pub failure_mode: FailureMode,
    pub embedding_dim: usize,
    pub embedding: EmbeddingKind,
    /// True mean of the seed candidate.
    pub initial_mean: f64,
}

impl Default for SyntheticEnvConfig {
    fn default() -> Self {
        Self {
            reward_cap: 1.0,
            gamma: 0.2,
            delta0: 0.5,
            sigma: 0.0,
            noise: NoiseKind::None,
            failure_mode: FailureMode::Stay,
            embedding_dim: 8,
            embedding: EmbeddingKind::Hashed,
            initial_mean: 0.0,
        }
    }
}

fn positive_finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be a positive finite number, got {v}")))
    }
}

impl SyntheticEnvConfig {
    pub fn validate(&self) -> Result<()> {
        positive_finite("reward_cap", self.reward_cap)?;
        positive_finite("gamma", self.gamma)?;
        if self.gamma > self.reward_cap {
            return Err(Error::config("gamma", "must not exceed reward_cap"));
        }
        if !(self.delta0 > 0.0 && self.delta0 <= 1.0) {
            return Err(Error::config("delta0", format!("must lie in (0, 1], got {}", self.delta0)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::config("sigma", "must be a non-negative finite number"));
        }
        if self.embedding_dim == 0 {
            return Err(Error::config("embedding_dim", "must be positive"));
        }
        if !(0.0..=self.reward_cap).contains(&self.initial_mean) {
            return Err(Error::config("initial_mean", "must lie in [0, reward_cap]"));
        }
        if self.noise == NoiseKind::Bernoulli && self.reward_cap > 1.0 {
            return Err(Error::config("noise", "bernoulli rewards need reward_cap <= 1"));
        }
        Ok(())
    }

    /// `N = B/γ`, rounded to the nearest integer when the ratio is integral
    /// up to floating-point noise.
    pub fn levels(&self) -> Result<u64> {
        integral_ratio(self.reward_cap, self.gamma)
            .ok_or_else(|| Error::config("gamma", "reward_cap must be an integer multiple of gamma"))
    }

    /// The `(B − γ, B]` band where no improvement is guaranteed.
    pub fn is_near_optimal(&self, mean: f64) -> bool {
        mean > self.reward_cap - self.gamma
    }
}

pub(crate) fn integral_ratio(num: f64, den: f64) -> Option<u64> {
    let r = num / den;
    let rounded = r.round();
    if rounded >= 1.0 && (r - rounded).abs() <= 1e-9 * rounded.max(1.0) {
        Some(rounded as u64)
    } else {
        None
    }
}

/// The hidden state a synthetic payload encodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticCandidateState {
    pub true_mean: f64,
    pub nonce: u64,
}

impl SyntheticCandidateState {
    pub fn new(true_mean: f64, nonce: u64) -> Self {
        Self { true_mean, nonce }
    }

    pub fn to_payload(&self) -> String {
        self.to_string()
    }

    pub fn parse(payload: &str) -> Option<Self> {
        let mut true_mean = None;
        let mut nonce = 0;
        for part in payload.trim().split(';') {
            let (k, v) = part.split_once('=')?;
            match k.trim() {
                "mu" => true_mean = v.trim().parse::<f64>().ok().filter(|m| m.is_finite()),
                "n" => nonce = u64::from_str_radix(v.trim(), 16).ok()?,
                _ => return None,
            }
        }
        true_mean.map(|true_mean| Self { true_mean, nonce })
    }
}

impl fmt::Display for SyntheticCandidateState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{:?}` on f64 round-trips exactly.
        write!(f, "mu={:?};n={:016x}", self.true_mean, self.nonce)
    }
}

pub fn true_mean_of(payload: &str) -> Result<f64, OracleError> {
    SyntheticCandidateState::parse(payload)
        .map(|s| s.true_mean)
        .ok_or_else(|| OracleError::new("synthetic", format!("payload {payload:?} carries no true mean")))
}

/// Draws one reward for a candidate with true mean `mu`.
pub fn guide_score(env: &SyntheticEnvConfig, mu: f64, task: &Task, rng: &mut dyn RngCore) -> Result<GuideScore, OracleError> {
    let reward = match env.noise {
        NoiseKind::None => mu,
        NoiseKind::Gaussian => {
            let normal = Normal::new(mu, env.sigma)
                .map_err(|e| OracleError::new("synthetic guide", e.to_string()))?;
            normal.sample(rng)
        }
        NoiseKind::Bernoulli => {
            if !(0.0..=1.0).contains(&mu) {
                return Err(OracleError::new(
                    "synthetic guide",
                    format!("bernoulli rewards need a mean in [0, 1], got {mu}"),
                ));
            }
            if rng.random::<f64>() < mu {
                1.0
            } else {
                0.0
            }
        }
    };
    Ok(GuideScore {
        reward,
        feedback: format!("task {}: reward {reward:.6}", task.id),
    })
}

/// Draws the true mean of a proposal seeded by a candidate with mean `mu`.
pub fn propose_mean(env: &SyntheticEnvConfig, mu: f64, rng: &mut dyn RngCore) -> f64 {
    let cap = env.reward_cap;
    if mu > cap - env.gamma {
        return mu;
    }
    if rng.random::<f64>() < env.delta0 {
        let lo = mu + env.gamma;
        let hi = (mu + 2.0 * env.gamma).min(cap);
        // U ∈ [0, 1) maps to (lo, hi].
        let u: f64 = rng.random();
        (hi - u * (hi - lo)).min(cap)
    } else {
        match env.failure_mode {
            FailureMode::Stay => mu,
            FailureMode::RegressUniform => rng.random::<f64>() * mu,
            FailureMode::Restart => 0.0,
        }
    }
}

pub fn synthetic_propose(env: &SyntheticEnvConfig, seed_payload: &str, rng: &mut dyn RngCore) -> Result<String, OracleError> {
    let mu = true_mean_of(seed_payload)?;
    let next = propose_mean(env, mu, rng);
    let nonce = rng.next_u64();
    Ok(SyntheticCandidateState::new(next, nonce).to_payload())
}

/// A deterministic point in `[0, 1)^dim` derived from a hash of the payload.
pub fn synthetic_embed(payload: &str, dim: usize) -> Vec<f64> {
    let digest = Sha256::digest(payload.as_bytes());
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    let mut rng = ChaCha8Rng::from_seed(seed);
    (0..dim).map(|_| rng.random::<f64>()).collect()
}

/// Guide, optimizer and embedder for the synthetic environment.
#[derive(Debug, Clone)]
pub struct SyntheticOracle {
    pub env: SyntheticEnvConfig,
}

impl SyntheticOracle {
    pub fn new(env: SyntheticEnvConfig) -> Result<Self> {
        env.validate()?;
        Ok(Self { env })
    }

    pub fn initial_payload(&self) -> String {
        SyntheticCandidateState::new(self.env.initial_mean, 0).to_payload()
    }
}

impl Guide for SyntheticOracle {
    fn score(&self, task: &Task, output: &str, rng: &mut dyn RngCore) -> Result<GuideScore, OracleError> {
        guide_score(&self.env, true_mean_of(output)?, task, rng)
    }
}

impl Optimizer for SyntheticOracle {
    fn propose(&self, context: &ProposalContext, rng: &mut dyn RngCore) -> Result<String, OracleError> {
        synthetic_propose(&self.env, &context.seed.payload, rng)
    }
}

/// Hash-derived embedding with the first coordinate replaced by `μ/B`.
pub fn mean_aligned_embed(payload: &str, dim: usize, reward_cap: f64) -> Result<Vec<f64>, OracleError> {
    let mu = true_mean_of(payload)?;
    let mut e = synthetic_embed(payload, dim);
    e[0] = (mu / reward_cap).clamp(0.0, 1.0);
    Ok(e)
}

impl Embedder for SyntheticOracle {
    fn embed(&self, payload: &str) -> Result<Vec<f64>, OracleError> {
        match self.env.embedding {
            EmbeddingKind::Hashed => Ok(synthetic_embed(payload, self.env.embedding_dim)),
            EmbeddingKind::MeanAligned => mean_aligned_embed(payload, self.env.embedding_dim, self.env.reward_cap),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn env(noise: NoiseKind, sigma: f64) -> SyntheticEnvConfig {
        SyntheticEnvConfig {
            noise,
            sigma,
            ..Default::default()
        }
    }

    #[test]
    fn payload_round_trip() {
        let s = SyntheticCandidateState::new(0.1 + 0.2, 0xdead_beef);
        let back = SyntheticCandidateState::parse(&s.to_payload()).unwrap();
        assert_eq!(back, s);
        assert_eq!(true_mean_of("mu=0.5").unwrap(), 0.5);
        assert!(true_mean_of("hello").is_err());
        assert!(true_mean_of("mu=NaN").is_err());
    }

    #[test]
    fn noiseless_reward_is_the_mean() {
        let e = env(NoiseKind::None, 0.0);
        let t = Task::new("t", "");
        let mut r = rng(1);
        for _ in 0..10 {
            assert_eq!(guide_score(&e, 0.7, &t, &mut r).unwrap().reward, 0.7);
        }
    }

    #[test]
    fn gaussian_sample_mean() {
        let e = env(NoiseKind::Gaussian, 0.5);
        let t = Task::new("t", "");
        let mut r = rng(2);
        let n = 10_000;
        let draws: Vec<f64> = (0..n).map(|_| guide_score(&e, 0.5, &t, &mut r).unwrap().reward).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() <= 0.02, "mean {mean}");
        // Unclamped: some draws leave [0, 1].
        assert!(draws.iter().any(|&x| !(0.0..=1.0).contains(&x)));
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 0.25).abs() < 0.02, "variance {var}");
    }

    #[test]
    fn bernoulli_rewards() {
        let e = env(NoiseKind::Bernoulli, 0.5);
        let t = Task::new("t", "");
        let mut r = rng(3);
        for _ in 0..100 {
            assert_eq!(guide_score(&e, 1.0, &t, &mut r).unwrap().reward, 1.0);
        }
        assert!(guide_score(&e, 1.5, &t, &mut r).is_err());
        let n = 20_000;
        let hits: f64 = (0..n).map(|_| guide_score(&e, 0.3, &t, &mut r).unwrap().reward).sum();
        let p = hits / n as f64;
        // Bounded in [0, 1], hence 1/4-sub-Gaussian: variance p(1-p) <= 1/4.
        assert!((p - 0.3).abs() < 0.015);
        assert!(p * (1.0 - p) <= 0.25);
    }

    #[test]
    fn forced_improvement() {
        let e = SyntheticEnvConfig {
            delta0: 1.0,
            gamma: 0.1,
            ..Default::default()
        };
        let mut r = rng(4);
        for _ in 0..1000 {
            let m = propose_mean(&e, 0.3, &mut r);
            assert!(m > 0.4 && m <= 0.5 + 1e-12, "{m}");
        }
    }

    #[test]
    fn improvement_frequency() {
        let e = SyntheticEnvConfig {
            delta0: 0.5,
            gamma: 0.2,
            ..Default::default()
        };
        let mut r = rng(5);
        let trials = 10_000;
        let improved = (0..trials).filter(|_| propose_mean(&e, 0.2, &mut r) > 0.4).count();
        let frac = improved as f64 / trials as f64;
        assert!((0.48..=0.52).contains(&frac), "{frac}");
    }

    #[test]
    fn top_band_stays_put() {
        let e = SyntheticEnvConfig::default();
        let mut r = rng(6);
        assert_eq!(propose_mean(&e, 1.0, &mut r), 1.0);
        assert_eq!(propose_mean(&e, 0.85, &mut r), 0.85);
    }

    #[test]
    fn failure_modes() {
        let mut e = SyntheticEnvConfig {
            delta0: 1e-9,
            ..Default::default()
        };
        let mut r = rng(7);
        e.failure_mode = FailureMode::Stay;
        assert_eq!(propose_mean(&e, 0.4, &mut r), 0.4);
        e.failure_mode = FailureMode::Restart;
        assert_eq!(propose_mean(&e, 0.4, &mut r), 0.0);
        e.failure_mode = FailureMode::RegressUniform;
        for _ in 0..100 {
            let m = propose_mean(&e, 0.4, &mut r);
            assert!((0.0..=0.4).contains(&m));
        }
    }

    #[test]
    fn embedding_is_deterministic() {
        let a = synthetic_embed("mu=0.1;n=0000000000000001", 5);
        assert_eq!(a.len(), 5);
        assert_eq!(a, synthetic_embed("mu=0.1;n=0000000000000001", 5));
        let b = synthetic_embed("mu=0.1;n=0000000000000002", 5);
        assert!(crate::filter::semantic_distance(&a, &b).unwrap() > 0.0);
        assert!(a.iter().all(|x| (0.0..1.0).contains(x)));
    }

    #[test]
    fn mean_aligned_separates_by_mean() {
        let a = mean_aligned_embed("mu=0.2;n=0000000000000001", 3, 1.0).unwrap();
        let b = mean_aligned_embed("mu=0.5;n=0000000000000001", 3, 1.0).unwrap();
        assert_eq!(a[0], 0.2);
        assert!(crate::filter::semantic_distance(&a, &b).unwrap() >= 0.3 - 1e-12);
        assert!(mean_aligned_embed("junk", 3, 1.0).is_err());
    }

    #[test]
    fn validation() {
        assert!(SyntheticEnvConfig::default().validate().is_ok());
        let bad = |f: fn(&mut SyntheticEnvConfig)| {
            let mut e = SyntheticEnvConfig::default();
            f(&mut e);
            e.validate().is_err()
        };
        assert!(bad(|e| e.delta0 = 0.0));
        assert!(bad(|e| e.delta0 = 1.1));
        assert!(bad(|e| e.gamma = 2.0));
        assert!(bad(|e| e.sigma = -1.0));
        assert!(bad(|e| e.embedding_dim = 0));
        assert_eq!(SyntheticEnvConfig::default().levels().unwrap(), 5);
        let e = SyntheticEnvConfig {
            gamma: 0.3,
            ..Default::default()
        };
        assert!(e.levels().is_err());
        assert_eq!("regress_uniform".parse::<FailureMode>().unwrap(), FailureMode::RegressUniform);
        assert!("nope".parse::<NoiseKind>().is_err());
    }

    proptest! {
        #[test]
        fn proposals_respect_the_cap(mu in 0.0f64..=1.0, gamma in 0.01f64..0.5, delta0 in 0.01f64..=1.0, seed: u64) {
            let e = SyntheticEnvConfig { gamma, delta0, failure_mode: FailureMode::RegressUniform, ..Default::default() };
            let mut r = rng(seed);
            for _ in 0..20 {
                let m = propose_mean(&e, mu, &mut r);
                prop_assert!((0.0..=1.0).contains(&m));
                if m > mu {
                    prop_assert!(m > mu + gamma || mu + gamma >= 1.0);
                }
            }
        }
    }
}
