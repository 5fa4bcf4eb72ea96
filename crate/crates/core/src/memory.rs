//! Candidate memory: per-candidate reward statistics plus the full
//! observation log.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Candidate, CandidateId, Observation};

/// Statistics for one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub candidate: Candidate,
    sample_count: u64,
    /// Running mean of rewards; 0 while unsampled.
    mean: f64,
    observations: Vec<Observation>,
}

impl MemoryEntry {
    fn new(candidate: Candidate) -> Self {
        Self {
            candidate,
            sample_count: 0,
            mean: 0.0,
            observations: Vec::new(),
        }
    }

    pub fn id(&self) -> CandidateId {
        self.candidate.id
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn is_sampled(&self) -> bool {
        self.sample_count > 0
    }

    /// Empirical mean reward, or `None` for an unsampled entry.
    pub fn mean(&self) -> Option<f64> {
        self.is_sampled().then_some(self.mean)
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    fn record(&mut self, observation: Observation) {
        self.sample_count += 1;
        self.mean += (observation.reward - self.mean) / self.sample_count as f64;
        self.observations.push(observation);
    }
}

/// The priority-queue memory. Ordering by priority is computed on demand by
/// the `strategies` module; entries are stored by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Memory {
    run_id: String,
    entries: BTreeMap<CandidateId, MemoryEntry>,
    total_samples: u64,
}

impl Memory {
    pub fn new(run_id: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            ..Self::default()
        }
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of observations across all entries.
    pub fn total_samples(&self) -> u64 {
        self.total_samples
    }

    pub fn get(&self, id: CandidateId) -> Option<&MemoryEntry> {
        self.entries.get(&id)
    }

    pub fn contains(&self, id: CandidateId) -> bool {
        self.entries.contains_key(&id)
    }

    /// Entries in id order.
    pub fn entries(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values()
    }

    pub fn candidates(&self) -> impl Iterator<Item = &Candidate> {
        self.entries.values().map(|e| &e.candidate)
    }

    /// The most recent creation iteration among stored candidates.
    pub fn latest_generation(&self) -> Option<u64> {
        self.entries.values().map(|e| e.candidate.created_at).max()
    }

    pub fn insert(&mut self, candidate: Candidate) -> Result<()> {
        if self.entries.contains_key(&candidate.id) {
            return Err(Error::DuplicateCandidate(candidate.id));
        }
        self.entries
            .insert(candidate.id, MemoryEntry::new(candidate));
        Ok(())
    }

    /// Appends observations to their entries. The batch is validated first,
    /// so an error leaves memory untouched.
    pub fn update_stats<I>(&mut self, observations: I) -> Result<()>
    where
        I: IntoIterator<Item = Observation>,
    {
        let observations: Vec<Observation> = observations.into_iter().collect();
        for obs in &observations {
            if !self.entries.contains_key(&obs.candidate_id) {
                return Err(Error::UnknownCandidate(obs.candidate_id));
            }
            if !obs.reward.is_finite() {
                return Err(Error::NonFiniteReward {
                    candidate: obs.candidate_id,
                    reward: obs.reward,
                });
            }
        }
        self.total_samples += observations.len() as u64;
        for obs in observations {
            // presence checked above
            if let Some(entry) = self.entries.get_mut(&obs.candidate_id) {
                entry.record(obs);
            }
        }
        Ok(())
    }

    /// The sampled candidate with the highest empirical mean. Ties go to the
    /// entry with more samples, then to the earlier-created one.
    pub fn best_candidate(&self) -> Result<&Candidate> {
        self.best_entry().map(|e| &e.candidate)
    }

    pub fn best_entry(&self) -> Result<&MemoryEntry> {
        if self.entries.is_empty() {
            return Err(Error::EmptyMemory);
        }
        self.entries
            .values()
            .filter(|e| e.is_sampled())
            .max_by(|a, b| compare_for_best(a, b))
            .ok_or(Error::NoSampledEntries)
    }

    pub fn to_snapshot(&self) -> MemorySnapshot {
        MemorySnapshot {
            run_id: self.run_id.clone(),
            total_samples: self.total_samples,
            entries: self.entries.values().cloned().collect(),
        }
    }

    /// Rebuilds memory from a snapshot, checking its bookkeeping.
    pub fn from_snapshot(snapshot: MemorySnapshot) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut total = 0;
        for entry in snapshot.entries {
            if entry.sample_count != entry.observations.len() as u64 {
                return Err(Error::Trace(format!(
                    "entry {} reports {} samples but logs {}",
                    entry.id(),
                    entry.sample_count,
                    entry.observations.len()
                )));
            }
            total += entry.sample_count;
            let id = entry.id();
            if entries.insert(id, entry).is_some() {
                return Err(Error::DuplicateCandidate(id));
            }
        }
        if total != snapshot.total_samples {
            return Err(Error::Trace(format!(
                "snapshot total_samples {} does not match entry sum {total}",
                snapshot.total_samples
            )));
        }
        Ok(Self {
            run_id: snapshot.run_id,
            entries,
            total_samples: total,
        })
    }
}

/// `Ordering::Greater` means `a` is the better pick.
fn compare_for_best(a: &MemoryEntry, b: &MemoryEntry) -> Ordering {
    a.mean
        .total_cmp(&b.mean)
        .then(a.sample_count.cmp(&b.sample_count))
        .then(b.candidate.created_at.cmp(&a.candidate.created_at))
        .then(b.id().cmp(&a.id()))
}

/// JSON form of [`Memory`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemorySnapshot {
    pub run_id: String,
    pub total_samples: u64,
    pub entries: Vec<MemoryEntry>,
}
