//! Post-hoc summaries of finished runs.

use std::collections::{BTreeMap, HashMap, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{CandidateRecord, RunResult, SelectedRecord};
use crate::model::LinearSoftmax;
use crate::numerics::{jaccard, mean, rolling_mean, spearman, variance};
use crate::scoring::{AcquisitionMethod, ClassPrototypes, ScoringConfig};
use crate::selection::UsageCounts;
use crate::stream::Example;

/// Pairwise Jaccard similarities between runs, over the acquired sets
/// (final set minus warm start) and over every id the stream showed them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub labels: Vec<String>,
    pub acquired: Vec<Vec<f64>>,
    pub seen: Vec<Vec<f64>>,
    pub accuracies: Vec<f64>,
}

/// The parts of a run the overlap matrix looks at.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSets {
    pub label: String,
    pub acquired: HashSet<u64>,
    pub seen: HashSet<u64>,
    pub accuracy: f64,
}

impl RunSets {
    pub fn new(
        label: impl Into<String>,
        selected: &[SelectedRecord],
        candidates: &[CandidateRecord],
        accuracy: f64,
    ) -> Self {
        RunSets {
            label: label.into(),
            acquired: selected.iter().filter(|s| s.step.is_some()).map(|s| s.id).collect(),
            seen: candidates.iter().map(|c| c.id).collect(),
            accuracy,
        }
    }

    pub fn from_result(label: impl Into<String>, result: &RunResult) -> Self {
        Self::new(label, &result.selected, &result.candidates, result.final_test_accuracy)
    }
}

pub fn overlap_matrix(runs: &[RunSets]) -> OverlapMatrix {
    let pairwise = |sets: Vec<&HashSet<u64>>| -> Vec<Vec<f64>> {
        sets.iter().map(|a| sets.iter().map(|b| jaccard(a, b)).collect()).collect()
    };
    OverlapMatrix {
        labels: runs.iter().map(|r| r.label.clone()).collect(),
        acquired: pairwise(runs.iter().map(|r| &r.acquired).collect()),
        seen: pairwise(runs.iter().map(|r| &r.seen).collect()),
        accuracies: runs.iter().map(|r| r.accuracy).collect(),
    }
}

/// Rolling mean of accepted scores, divided by its maximum.
pub fn score_trace(candidates: &[CandidateRecord], window: usize) -> Result<Vec<f64>> {
    let accepted: Vec<f64> = candidates.iter().filter(|c| c.accepted).map(|c| c.score).collect();
    if accepted.is_empty() {
        return Ok(Vec::new());
    }
    let smooth = rolling_mean(&accepted, window)?;
    let max = smooth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Err(Error::InvalidArgument(format!("cannot normalise a trace whose maximum is {max}")));
    }
    Ok(smooth.into_iter().map(|s| s / max).collect())
}

/// Rolling fraction of candidates accepted.
pub fn acceptance_rate_series(candidates: &[CandidateRecord], window: usize) -> Result<Vec<f64>> {
    let hits: Vec<f64> = candidates.iter().map(|c| f64::from(u8::from(c.accepted))).collect();
    if hits.is_empty() {
        return Ok(Vec::new());
    }
    rolling_mean(&hits, window)
}

/// Spearman correlations between the exact kernel score and its two
/// approximations on the same examples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankCorrelation {
    pub methods: Vec<AcquisitionMethod>,
    /// `None` where a score was constant over the sample.
    pub matrix: Vec<Vec<Option<f64>>>,
    pub scores: Vec<Vec<f64>>,
}

pub const KERNEL_METHODS: [AcquisitionMethod; 3] =
    [AcquisitionMethod::ExactDelta, AcquisitionMethod::PeaksV, AcquisitionMethod::Peaks];

/// Raw scores (no class-count normalisation) of each example under each
/// kernel method, then their pairwise rank correlations.
pub fn rank_correlation(
    model: &LinearSoftmax,
    examples: &[&Example],
    prototypes: &ClassPrototypes,
) -> Result<RankCorrelation> {
    // the kernel scores never consume randomness
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut scores = vec![Vec::with_capacity(examples.len()); KERNEL_METHODS.len()];
    for e in examples {
        let pred = model.forward(&e.features)?;
        for (m, column) in KERNEL_METHODS.iter().zip(scores.iter_mut()) {
            let cfg = ScoringConfig::new(*m);
            column.push(cfg.raw_score(model, &pred, &e.features, e.label, Some(prototypes), &mut rng)?);
        }
    }
    let matrix = scores
        .iter()
        .map(|a| {
            scores
                .iter()
                .map(|b| match spearman(a, b) {
                    Ok(r) => Ok(Some(r)),
                    Err(Error::UndefinedCorrelation) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankCorrelation { methods: KERNEL_METHODS.to_vec(), matrix, scores })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    /// usage count → number of examples with it
    pub histogram: BTreeMap<u64, usize>,
    pub mean: f64,
    pub variance: f64,
    pub std: f64,
}

pub fn usage_stats(usage: &UsageCounts) -> Result<UsageStats> {
    let counts: Vec<f64> = usage.iter().map(|(_, c)| c as f64).collect();
    let mean = mean(&counts).ok_or(Error::EmptyDataset)?;
    let variance = variance(&counts).ok_or(Error::EmptyDataset)?;
    let mut histogram = BTreeMap::new();
    for (_, c) in usage.iter() {
        *histogram.entry(c).or_insert(0) += 1;
    }
    Ok(UsageStats { histogram, mean, variance, std: variance.sqrt() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseAudit {
    pub total: usize,
    /// Examples whose clean label is known.
    pub known: usize,
    pub noisy: usize,
}

impl NoiseAudit {
    pub fn fraction(&self) -> Option<f64> {
        (self.known > 0).then(|| self.noisy as f64 / self.known as f64)
    }
}

/// Counts observed-label errors among `ids`. Unknown ids are an error.
pub fn noise_audit(ids: &[u64], lookup: &HashMap<u64, &Example>) -> Result<NoiseAudit> {
    let mut audit = NoiseAudit { total: ids.len(), known: 0, noisy: 0 };
    for id in ids {
        let e = lookup.get(id).ok_or_else(|| Error::InvalidArgument(format!("unknown id {id}")))?;
        if let Some(noisy) = e.is_noisy() {
            audit.known += 1;
            audit.noisy += usize::from(noisy);
        }
    }
    Ok(audit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: u64, score: f64, accepted: bool) -> CandidateRecord {
        CandidateRecord { step: 0, id, label: 0, raw_score: score, score, percentile: 0.0, accepted }
    }

    fn sel(id: u64, step: Option<usize>) -> SelectedRecord {
        SelectedRecord { id, label: 0, step }
    }

    #[test]
    fn overlap_examples() {
        let a = RunSets::new(
            "a",
            &[sel(0, None), sel(1, Some(0)), sel(2, Some(0)), sel(3, Some(1))],
            &[cand(1, 0.0, true), cand(2, 0.0, true), cand(3, 0.0, true)],
            0.5,
        );
        let b = RunSets::new(
            "b",
            &[sel(0, None), sel(2, Some(0)), sel(3, Some(0)), sel(4, Some(1))],
            &[cand(2, 0.0, true), cand(3, 0.0, true), cand(3, 0.0, false), cand(4, 0.0, true)],
            0.6,
        );
        let m = overlap_matrix(&[a.clone(), b.clone()]);
        assert_eq!(m.acquired, vec![vec![1.0, 0.5], vec![0.5, 1.0]]);
        assert_eq!(m.seen, vec![vec![1.0, 0.5], vec![0.5, 1.0]]);
        assert_eq!(m.accuracies, vec![0.5, 0.6]);

        let c = RunSets::new("c", &[sel(9, Some(0))], &[cand(9, 0.0, true)], 0.1);
        let m = overlap_matrix(&[a.clone(), c]);
        assert_eq!(m.acquired[0][1], 0.0);
        // permuting runs permutes the matrix
        let swapped = overlap_matrix(&[b, a]);
        assert_eq!(swapped.acquired[0][1], 0.5);
    }

    #[test]
    fn trace_normalises_by_max() {
        let c = [cand(0, 1.0, true), cand(1, 9.0, false), cand(2, 3.0, true), cand(3, 5.0, true)];
        let t = score_trace(&c, 2).unwrap();
        assert_eq!(t, vec![1.0 / 4.0, 2.0 / 4.0, 1.0]);
        assert!(score_trace(&[], 3).unwrap().is_empty());
        assert!(score_trace(&[cand(0, -1.0, true)], 3).is_err());
        let constant: Vec<_> = (0..5).map(|i| cand(i, 2.5, true)).collect();
        assert_eq!(score_trace(&constant, 500).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn acceptance_series() {
        let c = [cand(0, 0.0, true), cand(1, 0.0, false), cand(2, 0.0, false), cand(3, 0.0, true)];
        assert_eq!(acceptance_rate_series(&c, 2).unwrap(), vec![1.0, 0.5, 0.0, 0.5]);
    }

    #[test]
    fn usage_stats_example() {
        let mut u = UsageCounts::default();
        for (id, n) in [(1, 2), (2, 2), (3, 5)] {
            for _ in 0..n {
                u.increment(id);
            }
        }
        u.touch(4);
        let s = usage_stats(&u).unwrap();
        assert_eq!(s.histogram, BTreeMap::from([(0, 1), (2, 2), (5, 1)]));
        assert_eq!(s.mean, 2.25);
        // (2.25² + 0.25² + 0.25² + 2.75²) / 4
        assert!((s.variance - 3.1875).abs() < 1e-12);
        assert!(usage_stats(&UsageCounts::default()).is_err());
        let small: UsageCounts = [(1, 1), (2, 1), (3, 2)].into_iter().collect();
        assert!((usage_stats(&small).unwrap().mean - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn noise_audit_counts() {
        let ex = [
            Example { id: 1, features: vec![], label: 0, clean_label: Some(0) },
            Example { id: 2, features: vec![], label: 1, clean_label: Some(0) },
            Example { id: 3, features: vec![], label: 1, clean_label: None },
        ];
        let lookup: HashMap<u64, &Example> = ex.iter().map(|e| (e.id, e)).collect();
        let a = noise_audit(&[1, 2, 3], &lookup).unwrap();
        assert_eq!(a, NoiseAudit { total: 3, known: 2, noisy: 1 });
        assert_eq!(a.fraction(), Some(0.5));
        assert!(noise_audit(&[9], &lookup).is_err());
        assert_eq!(noise_audit(&[3], &lookup).unwrap().fraction(), None);
    }
}
