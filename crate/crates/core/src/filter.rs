//! ε-Net semantic filter.
//!
//! New candidates are admitted by farthest-first traversal: at every round
//! the remaining candidate farthest from the current population (memory plus
//! everything admitted so far) is considered, and admitted only if that
//! distance is at least ε. The first rejection ends the traversal, since
//! every candidate still waiting is at least as close to the population.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::Memory;
use crate::types::{Candidate, CandidateId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub epsilon: f64,
    pub dimension: usize,
}

impl FilterConfig {
    pub fn new(epsilon: f64, dimension: usize) -> Result<Self> {
        let config = Self { epsilon, dimension };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be a finite value >= 0"));
        }
        if self.dimension == 0 {
            return Err(Error::config("dimension", "must be positive"));
        }
        Ok(())
    }
}

/// Outcome of the filter for one raw candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub candidate_id: CandidateId,
    pub accepted: bool,
    /// Distance to the nearest population member when the decision was made;
    /// `None` when the population was empty.
    pub min_distance: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    /// Admitted candidates, in admission order.
    pub accepted: Vec<Candidate>,
    /// One decision per raw candidate: admissions first, then rejections.
    pub decisions: Vec<FilterDecision>,
}

/// Euclidean distance between two embeddings.
pub fn semantic_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(squared_distance(a, b).sqrt())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn embedding_of(candidate: &Candidate, dimension: usize) -> Result<&[f64]> {
    let embedding = candidate
        .embedding
        .as_deref()
        .ok_or(Error::MissingEmbedding(candidate.id))?;
    if embedding.len() != dimension {
        return Err(Error::DimensionMismatch {
            expected: dimension,
            found: embedding.len(),
        });
    }
    Ok(embedding)
}

/// Filters `raw` against `memory`, returning the admitted candidates in
/// admission order together with a decision record for every raw candidate.
pub fn semantic_filter(
    raw: Vec<Candidate>,
    memory: &Memory,
    config: &FilterConfig,
) -> Result<FilterOutcome> {
    config.validate()?;
    let population: Vec<&[f64]> = memory
        .candidates()
        .map(|c| embedding_of(c, config.dimension))
        .collect::<Result<_>>()?;
    let raw_embeddings: Vec<&[f64]> = raw
        .iter()
        .map(|c| embedding_of(c, config.dimension))
        .collect::<Result<_>>()?;

    // Squared nearest-population distance per raw candidate; +inf while the
    // population is empty.
    let mut nearest: Vec<f64> = raw_embeddings
        .iter()
        .map(|e| {
            population
                .iter()
                .map(|p| squared_distance(e, p))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let mut remaining: Vec<usize> = (0..raw.len()).collect();
    let mut admitted: Vec<usize> = Vec::new();
    let mut decisions = Vec::with_capacity(raw.len());
    let eps_sq = config.epsilon * config.epsilon;

    while !remaining.is_empty() {
        // argmax with ties resolved by raw order
        let (pos, &pick) = remaining
            .iter()
            .enumerate()
            .fold(None::<(usize, &usize)>, |best, (pos, idx)| match best {
                Some((_, b)) if nearest[*b] >= nearest[*idx] => best,
                _ => Some((pos, idx)),
            })
            .expect("remaining is non-empty");
        let d_sq = nearest[pick];
        if d_sq >= eps_sq {
            decisions.push(decision(&raw[pick], true, d_sq));
            remaining.remove(pos);
            admitted.push(pick);
            for &other in &remaining {
                let d = squared_distance(raw_embeddings[other], raw_embeddings[pick]);
                if d < nearest[other] {
                    nearest[other] = d;
                }
            }
        } else {
            decisions.push(decision(&raw[pick], false, d_sq));
            remaining.remove(pos);
            for &other in &remaining {
                decisions.push(decision(&raw[other], false, nearest[other]));
            }
            break;
        }
    }

    let mut slots: Vec<Option<Candidate>> = raw.into_iter().map(Some).collect();
    let accepted = admitted
        .into_iter()
        .map(|i| slots[i].take().expect("each candidate admitted once"))
        .collect();
    Ok(FilterOutcome {
        accepted,
        decisions,
    })
}

fn decision(candidate: &Candidate, accepted: bool, d_sq: f64) -> FilterDecision {
    FilterDecision {
        candidate_id: candidate.id,
        accepted,
        min_distance: d_sq.is_finite().then(|| d_sq.sqrt()),
    }
}

/// Upper bound on the number of points with pairwise distance at least ε
/// inside a hypercube of the given side: `ceil(side * sqrt(d) / ε + 1)^d`.
/// Saturates at `u64::MAX`.
pub fn packing_bound(epsilon: f64, dimension: usize, side_length: f64) -> Result<u64> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::config("epsilon", "packing bound needs epsilon > 0"));
    }
    if dimension == 0 {
        return Err(Error::config("dimension", "must be positive"));
    }
    if !(side_length >= 0.0 && side_length.is_finite()) {
        return Err(Error::config("side_length", "must be finite and >= 0"));
    }
    let per_axis = (side_length * (dimension as f64).sqrt() / epsilon + 1.0).ceil();
    if per_axis >= u64::MAX as f64 {
        return Ok(u64::MAX);
    }
    let per_axis = per_axis as u64;
    let exponent = u32::try_from(dimension).unwrap_or(u32::MAX);
    Ok(per_axis.checked_pow(exponent).unwrap_or(u64::MAX))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn point(id: u64, xs: &[f64]) -> Candidate {
        Candidate::new(CandidateId(id), format!("p{id}")).with_embedding(xs.to_vec())
    }

    fn memory_with(points: &[&[f64]]) -> Memory {
        let mut m = Memory::new("run");
        for (i, p) in points.iter().enumerate() {
            m.insert(point(1000 + i as u64, p)).unwrap();
        }
        m
    }

    #[test]
    fn distance_examples() {
        assert_eq!(semantic_distance(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(semantic_distance(&[0.3, -2.0], &[0.3, -2.0]).unwrap(), 0.0);
        let d = semantic_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((d - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!(matches!(
            semantic_distance(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn farthest_first_admission_order() {
        let memory = memory_with(&[&[0.0, 0.0]]);
        let raw = vec![point(1, &[2.0, 0.0]), point(2, &[4.0, 0.0])];
        let out = semantic_filter(raw, &memory, &FilterConfig::new(1.0, 2).unwrap()).unwrap();
        let ids: Vec<_> = out.accepted.iter().map(|c| c.id.0).collect();
        assert_eq!(ids, vec![2, 1]);
        assert_eq!(out.decisions[0].min_distance, Some(4.0));
        assert_eq!(out.decisions[1].min_distance, Some(2.0));
    }

    #[test]
    fn rejection_terminates_traversal() {
        let memory = memory_with(&[&[0.0, 0.0]]);
        let raw = vec![point(1, &[0.5, 0.0]), point(2, &[3.0, 0.0])];
        let out = semantic_filter(raw, &memory, &FilterConfig::new(1.0, 2).unwrap()).unwrap();
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.accepted[0].id, CandidateId(2));
        let rejected = &out.decisions[1];
        assert_eq!(rejected.candidate_id, CandidateId(1));
        assert!(!rejected.accepted);
        assert_eq!(rejected.min_distance, Some(0.5));
    }

    #[test]
    fn zero_epsilon_admits_everything_including_duplicates() {
        let memory = memory_with(&[&[0.0, 0.0]]);
        let raw = vec![
            point(1, &[0.1, 0.0]),
            point(2, &[0.0, 0.2]),
            point(3, &[0.0, 0.0]),
        ];
        let out = semantic_filter(raw, &memory, &FilterConfig::new(0.0, 2).unwrap()).unwrap();
        assert_eq!(out.accepted.len(), 3);
    }

    #[test]
    fn positive_epsilon_rejects_exact_duplicates() {
        let memory = memory_with(&[&[0.5, 0.5]]);
        let out = semantic_filter(
            vec![point(1, &[0.5, 0.5])],
            &memory,
            &FilterConfig::new(1e-9, 2).unwrap(),
        )
        .unwrap();
        assert!(out.accepted.is_empty());
        assert_eq!(out.decisions[0].min_distance, Some(0.0));
    }

    #[test]
    fn empty_population_admits_first_pick_with_no_distance() {
        let memory = Memory::new("run");
        let raw = vec![point(1, &[0.0]), point(2, &[0.5])];
        let out = semantic_filter(raw, &memory, &FilterConfig::new(1.0, 1).unwrap()).unwrap();
        assert_eq!(out.accepted.len(), 1);
        assert_eq!(out.accepted[0].id, CandidateId(1));
        assert_eq!(out.decisions[0].min_distance, None);
    }

    #[test]
    fn missing_embedding_names_candidate() {
        let memory = memory_with(&[&[0.0]]);
        let raw = vec![Candidate::new(CandidateId(9), "x")];
        let err = semantic_filter(raw, &memory, &FilterConfig::new(0.1, 1).unwrap()).unwrap_err();
        assert!(err.to_string().contains("c9"));
    }

    #[test]
    fn packing_bound_examples() {
        assert_eq!(packing_bound(1.0, 1, 4.0).unwrap(), 5);
        assert_eq!(packing_bound(10.0, 1, 4.0).unwrap(), 2);
        assert!(packing_bound(0.0, 1, 4.0).is_err());
        assert_eq!(packing_bound(0.001, 64, 1.0).unwrap(), u64::MAX);
    }

    /// Largest ε-separated subset of a fine grid on [0, side], by greedy
    /// left-to-right placement (optimal in one dimension).
    fn brute_force_1d(epsilon: f64, side: f64) -> u64 {
        let steps = 40_000;
        let mut last = f64::NEG_INFINITY;
        let mut count = 0;
        for i in 0..=steps {
            let x = side * i as f64 / steps as f64;
            if x - last >= epsilon - 1e-12 {
                count += 1;
                last = x;
            }
        }
        count
    }

    #[test]
    fn packing_bound_dominates_brute_force_in_one_dimension() {
        assert_eq!(brute_force_1d(1.0, 4.0), 5);
        assert_eq!(brute_force_1d(10.0, 4.0), 1);
        for &(eps, side) in &[(1.0, 4.0), (10.0, 4.0), (0.3, 1.0), (0.07, 2.5)] {
            assert!(packing_bound(eps, 1, side).unwrap() >= brute_force_1d(eps, side));
        }
    }

    fn scenario() -> impl Strategy<Value = (usize, f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        (1usize..5, 0.0f64..0.8).prop_flat_map(|(d, eps)| {
            let v = prop::collection::vec(0.0f64..1.0, d);
            (
                Just(d),
                Just(eps),
                prop::collection::vec(v.clone(), 0..6),
                prop::collection::vec(v, 0..12),
            )
        })
    }

    fn separated_memory(d: usize, eps: f64, points: Vec<Vec<f64>>) -> Memory {
        // seed memory through the filter so it already is an ε-net
        let raw = points
            .into_iter()
            .enumerate()
            .map(|(i, p)| point(500 + i as u64, &p))
            .collect();
        let mut m = Memory::new("run");
        let out = semantic_filter(raw, &m, &FilterConfig::new(eps, d).unwrap()).unwrap();
        for c in out.accepted {
            m.insert(c).unwrap();
        }
        m
    }

    proptest! {
        #[test]
        fn separation_idempotence_and_greedy_choice((d, eps, mem_pts, raw_pts) in scenario()) {
            let config = FilterConfig::new(eps, d).unwrap();
            let mut memory = separated_memory(d, eps, mem_pts);
            let raw: Vec<_> = raw_pts.iter().enumerate().map(|(i, p)| point(i as u64, p)).collect();
            let out = semantic_filter(raw.clone(), &memory, &config).unwrap();
            prop_assert_eq!(out.decisions.len(), raw.len());

            if !memory.is_empty() && !raw.is_empty() {
                let best = raw.iter().map(|c| {
                    memory.candidates()
                        .map(|m| semantic_distance(c.embedding.as_ref().unwrap(), m.embedding.as_ref().unwrap()).unwrap())
                        .fold(f64::INFINITY, f64::min)
                }).fold(f64::NEG_INFINITY, f64::max);
                prop_assert!((out.decisions[0].min_distance.unwrap() - best).abs() < 1e-12);
            }

            for c in &out.accepted {
                memory.insert(c.clone()).unwrap();
            }
            let all: Vec<_> = memory.candidates().collect();
            for i in 0..all.len() {
                for j in (i + 1)..all.len() {
                    let dist = semantic_distance(
                        all[i].embedding.as_ref().unwrap(),
                        all[j].embedding.as_ref().unwrap(),
                    ).unwrap();
                    prop_assert!(dist > eps - 1e-12);
                }
            }
            let again: Vec<_> = out.accepted.iter().map(|c| {
                let mut c = c.clone();
                c.id = CandidateId(c.id.0 + 10_000);
                c
            }).collect();
            let second = semantic_filter(again, &memory, &config).unwrap();
            prop_assert!(eps == 0.0 || second.accepted.is_empty());
        }
    }
}
