//! The `filter-check` subcommand: audits a memory snapshot for ε-net
//! separation, packing-bound compliance and filter idempotence.

use std::path::Path;

use anyhow::{bail, Context};
use polca_core::filter::{packing_bound, semantic_distance, semantic_filter, FilterConfig};
use polca_core::{Memory, MemorySnapshot};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub a: u64,
    pub b: u64,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FilterAudit {
    pub candidates: usize,
    pub dimension: usize,
    pub epsilon: f64,
    pub min_pairwise_distance: Option<f64>,
    pub violations: Vec<Violation>,
    /// Side of the smallest axis-aligned cube at the origin holding every
    /// embedding (at least 1).
    pub side_length: f64,
    pub packing_bound: u64,
    pub within_packing_bound: bool,
    /// Filtering the stored candidates against an empty memory admits all of them.
    pub self_consistent: bool,
    /// Filtering them again against the restored memory admits none.
    pub idempotent: bool,
    pub pass: bool,
}

pub fn audit_snapshot(snapshot: MemorySnapshot, epsilon: f64) -> anyhow::Result<FilterAudit> {
    let memory = Memory::from_snapshot(snapshot)?;
    let candidates: Vec<_> = memory.candidates().cloned().collect();
    let mut dims = candidates.iter().map(|c| c.embedding.as_ref().map(Vec::len));
    let dimension = match dims.next() {
        None => bail!("snapshot has no candidates"),
        Some(None) => bail!("candidate {} has no embedding", candidates[0].id),
        Some(Some(d)) => d,
    };
    let config = FilterConfig::new(epsilon, dimension)?;

    let embeddings: Vec<&[f64]> = candidates
        .iter()
        .map(|c| c.embedding.as_deref().with_context(|| format!("candidate {} has no embedding", c.id)))
        .collect::<anyhow::Result<_>>()?;
    let mut min_pairwise: Option<f64> = None;
    let mut violations = Vec::new();
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            let d = semantic_distance(embeddings[i], embeddings[j])?;
            min_pairwise = Some(min_pairwise.map_or(d, |m| m.min(d)));
            if d < epsilon {
                violations.push(Violation {
                    a: candidates[i].id.0,
                    b: candidates[j].id.0,
                    distance: d,
                });
            }
        }
    }
    let side_length = embeddings
        .iter()
        .flat_map(|e| e.iter())
        .fold(1.0f64, |m, x| m.max(x.abs()));
    let (bound, within) = if epsilon > 0.0 {
        let b = packing_bound(epsilon, dimension, side_length)?;
        (b, candidates.len() as u64 <= b)
    } else {
        (u64::MAX, true)
    };

    let fresh = semantic_filter(candidates.clone(), &Memory::new("audit"), &config)?;
    let self_consistent = fresh.accepted.len() == candidates.len();
    let again = semantic_filter(candidates.clone(), &memory, &config)?;
    let idempotent = epsilon == 0.0 || again.accepted.is_empty();

    let pass = violations.is_empty() && within && self_consistent && idempotent;
    Ok(FilterAudit {
        candidates: candidates.len(),
        dimension,
        epsilon,
        min_pairwise_distance: min_pairwise,
        violations,
        side_length,
        packing_bound: bound,
        within_packing_bound: within,
        self_consistent,
        idempotent,
        pass,
    })
}

pub fn audit_file(path: &Path, epsilon: f64) -> anyhow::Result<FilterAudit> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let snapshot: MemorySnapshot =
        serde_json::from_str(&text).with_context(|| format!("{} is not a memory snapshot", path.display()))?;
    audit_snapshot(snapshot, epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use polca_core::{Candidate, CandidateId};

    fn snapshot(points: &[&[f64]]) -> MemorySnapshot {
        let mut m = Memory::new("t");
        for (i, p) in points.iter().enumerate() {
            m.insert(Candidate::new(CandidateId(i as u64), format!("p{i}")).with_embedding(p.to_vec()))
                .unwrap();
        }
        m.to_snapshot()
    }

    #[test]
    fn separated_memory_passes() {
        let a = audit_snapshot(snapshot(&[&[0.0, 0.0], &[0.5, 0.0], &[0.0, 0.5]]), 0.4).unwrap();
        assert!(a.pass, "{a:?}");
        assert_eq!(a.min_pairwise_distance, Some(0.5));
    }

    #[test]
    fn close_pair_is_reported() {
        let a = audit_snapshot(snapshot(&[&[0.0, 0.0], &[0.05, 0.0], &[1.0, 1.0]]), 0.1).unwrap();
        assert!(!a.pass);
        assert_eq!(a.violations.len(), 1);
        assert_eq!((a.violations[0].a, a.violations[0].b), (0, 1));
        assert!(!a.self_consistent);
    }

    #[test]
    fn missing_embeddings_are_errors() {
        let mut m = Memory::new("t");
        m.insert(Candidate::new(CandidateId(0), "x")).unwrap();
        assert!(audit_snapshot(m.to_snapshot(), 0.1).is_err());
    }
}
