//! Percentile-threshold acceptance over a refreshable score cache, plus the
//! per-class and per-example counters the selection loop maintains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::percentile_rank_sorted;
use crate::scoring::AcquisitionMethod;

/// Which part of the cache's percentile range gets accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    /// `q ≥ 100 − p`
    Top,
    /// `q ≤ p`
    Bottom,
    /// `50 − p/2 ≤ q ≤ 50 + p/2`
    Middle,
}

impl Band {
    pub fn for_method(method: AcquisitionMethod) -> Band {
        match method {
            AcquisitionMethod::HardEmb => Band::Bottom,
            AcquisitionMethod::ModerateEmb => Band::Middle,
            _ => Band::Top,
        }
    }

    pub fn accepts(self, percentile: f64, rate: f64) -> bool {
        match self {
            Band::Top => percentile >= 100.0 - rate,
            Band::Bottom => percentile <= rate,
            Band::Middle => (50.0 - rate / 2.0..=50.0 + rate / 2.0).contains(&percentile),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub band: Band,
    /// Selection rate `p`, in percent.
    pub rate: f64,
}

impl SelectionPolicy {
    pub fn new(method: AcquisitionMethod, rate: f64) -> Result<Self> {
        Self::with_band(Band::for_method(method), rate)
    }

    pub fn with_band(band: Band, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate <= 100.0) {
            return Err(Error::InvalidArgument(format!("selection rate must be in (0, 100], got {rate}")));
        }
        Ok(SelectionPolicy { band, rate })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub accepted: bool,
    pub percentile: f64,
}

/// Scores seen since the last refresh. Cleared every `refresh_period` model
/// updates; `None` never clears.
#[derive(Clone, Debug)]
pub struct ScoreCache {
    sorted: Vec<f64>,
    refresh_period: Option<usize>,
    updates_since_refresh: usize,
    refreshes: usize,
}

impl ScoreCache {
    pub fn new(refresh_period: Option<usize>) -> Result<Self> {
        if refresh_period == Some(0) {
            return Err(Error::InvalidArgument("refresh period must be >= 1".into()));
        }
        Ok(ScoreCache { sorted: Vec::new(), refresh_period, updates_since_refresh: 0, refreshes: 0 })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn refreshes(&self) -> usize {
        self.refreshes
    }

    pub fn percentile(&self, score: f64) -> f64 {
        percentile_rank_sorted(score, &self.sorted)
    }

    fn insert(&mut self, score: f64) {
        let at = self.sorted.partition_point(|&c| c <= score);
        self.sorted.insert(at, score);
    }

    /// Ranks `score` against the cache as it stands, applies the policy's
    /// band, then records the score whatever the outcome.
    pub fn decide(&mut self, score: f64, policy: &SelectionPolicy) -> Result<Decision> {
        if !score.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite score {score}")));
        }
        let percentile = self.percentile(score);
        let accepted = policy.band.accepts(percentile, policy.rate);
        self.insert(score);
        Ok(Decision { accepted, percentile })
    }

    /// Counts one model update. Returns true when this update triggered a
    /// refresh (the cache is then empty).
    pub fn on_model_update(&mut self) -> bool {
        self.updates_since_refresh += 1;
        match self.refresh_period {
            Some(period) if self.updates_since_refresh >= period => {
                self.sorted.clear();
                self.updates_since_refresh = 0;
                self.refreshes += 1;
                true
            }
            _ => false,
        }
    }
}

/// Selected examples per class, `c_y(t)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(Vec<usize>);

impl ClassCounts {
    pub fn new(num_classes: usize) -> Self {
        ClassCounts(vec![0; num_classes])
    }

    pub fn increment(&mut self, class: usize) {
        self.0[class] += 1;
    }

    pub fn get(&self, class: usize) -> usize {
        self.0[class]
    }

    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Largest over smallest class count; `None` if some class has none.
    pub fn imbalance_ratio(&self) -> Option<f64> {
        let max = *self.0.iter().max()?;
        let min = *self.0.iter().min()?;
        (min > 0).then(|| max as f64 / min as f64)
    }
}

/// How many training batches each selected example has appeared in, `c_i(t)`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageCounts(BTreeMap<u64, u64>);

impl UsageCounts {
    pub fn increment(&mut self, id: u64) {
        *self.0.entry(id).or_insert(0) += 1;
    }

    pub fn get(&self, id: u64) -> u64 {
        self.0.get(&id).copied().unwrap_or(0)
    }

    /// Registers `id` with a zero count if unseen.
    pub fn touch(&mut self, id: u64) {
        self.0.entry(id).or_insert(0);
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, u64)> + '_ {
        self.0.iter().map(|(&k, &v)| (k, v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(u64, u64)> for UsageCounts {
    fn from_iter<I: IntoIterator<Item = (u64, u64)>>(iter: I) -> Self {
        UsageCounts(iter.into_iter().collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn filled(scores: &[f64]) -> ScoreCache {
        let mut c = ScoreCache::new(None).unwrap();
        let keep_all = SelectionPolicy::with_band(Band::Top, 100.0).unwrap();
        for &s in scores {
            c.decide(s, &keep_all).unwrap();
        }
        c
    }

    fn one_to_ten() -> Vec<f64> {
        (1..=10).map(f64::from).collect()
    }

    #[test]
    fn top_band_example() {
        let mut c = filled(&one_to_ten());
        let p = SelectionPolicy::new(AcquisitionMethod::Peaks, 20.0).unwrap();
        let d = c.decide(9.5, &p).unwrap();
        assert_eq!(d, Decision { accepted: true, percentile: 90.0 });
        assert_eq!(c.len(), 11);
    }

    #[test]
    fn moderate_band_example() {
        let mut c = filled(&one_to_ten());
        let p = SelectionPolicy::new(AcquisitionMethod::ModerateEmb, 20.0).unwrap();
        assert_eq!(c.decide(5.5, &p).unwrap(), Decision { accepted: true, percentile: 50.0 });
        let mut c = filled(&one_to_ten());
        assert!(!c.decide(9.5, &p).unwrap().accepted);
    }

    #[test]
    fn hard_band_takes_low_tail() {
        let p = SelectionPolicy::new(AcquisitionMethod::HardEmb, 20.0).unwrap();
        assert!(filled(&one_to_ten()).decide(1.5, &p).unwrap().accepted);
        assert!(!filled(&one_to_ten()).decide(9.5, &p).unwrap().accepted);
    }

    #[test]
    fn empty_cache_accepts_top_band() {
        let mut c = ScoreCache::new(Some(3)).unwrap();
        let p = SelectionPolicy::new(AcquisitionMethod::Random, 20.0).unwrap();
        assert_eq!(c.decide(-1e9, &p).unwrap(), Decision { accepted: true, percentile: 100.0 });
    }

    #[test]
    fn decide_is_pure_apart_from_append() {
        let p = SelectionPolicy::new(AcquisitionMethod::Peaks, 30.0).unwrap();
        let mut a = filled(&[3.0, 1.0, 2.0]);
        let mut b = filled(&[1.0, 2.0, 3.0]);
        assert_eq!(a.decide(2.5, &p).unwrap(), b.decide(2.5, &p).unwrap());
        assert!(a.decide(f64::NAN, &p).is_err());
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn refresh_cadence() {
        let mut c = filled(&one_to_ten());
        c.refresh_period = Some(3);
        assert!(!c.on_model_update());
        assert!(!c.on_model_update());
        assert_eq!(c.len(), 10);
        assert!(c.on_model_update());
        assert!(c.is_empty());

        let mut c = ScoreCache::new(Some(3)).unwrap();
        let refreshes = (0..40).filter(|_| c.on_model_update()).count();
        assert_eq!(refreshes, 40 / 3);
        assert_eq!(c.refreshes(), 13);

        let mut never = ScoreCache::new(None).unwrap();
        assert!((0..1000).all(|_| !never.on_model_update()));
        assert!(ScoreCache::new(Some(0)).is_err());
    }

    #[test]
    fn policy_rejects_bad_rate() {
        assert!(SelectionPolicy::new(AcquisitionMethod::Peaks, 0.0).is_err());
        assert!(SelectionPolicy::new(AcquisitionMethod::Peaks, 100.5).is_err());
        assert!(SelectionPolicy::new(AcquisitionMethod::Peaks, 100.0).is_ok());
    }

    #[test]
    fn counters() {
        let mut cc = ClassCounts::new(5);
        assert_eq!(cc.get(3), 0);
        cc.increment(3);
        cc.increment(3);
        assert_eq!(cc.get(3), 2);
        assert_eq!(cc.total(), 2);
        assert_eq!(cc.imbalance_ratio(), None);

        let mut u = UsageCounts::default();
        assert_eq!(u.get(9), 0);
        u.increment(9);
        u.touch(9);
        u.touch(4);
        assert_eq!((u.get(9), u.get(4), u.len()), (1, 0, 2));
    }

    fn acceptance_fraction(band: Band, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cache = ScoreCache::new(Some(100)).unwrap();
        let p = SelectionPolicy::with_band(band, 20.0).unwrap();
        let mut accepted = 0;
        for i in 0..10_000 {
            if cache.decide(rng.random(), &p).unwrap().accepted {
                accepted += 1;
            }
            // one model update per 5 candidates
            if i % 5 == 4 {
                cache.on_model_update();
            }
        }
        accepted as f64 / 10_000.0
    }

    #[test]
    fn iid_acceptance_near_rate() {
        for band in [Band::Top, Band::Middle, Band::Bottom] {
            let f = acceptance_fraction(band, 17);
            assert!((0.17..=0.23).contains(&f), "{band:?}: {f}");
        }
    }

    proptest! {
        #[test]
        fn same_cache_same_decision(scores in prop::collection::vec(-5.0f64..5.0, 0..40), s in -6.0f64..6.0, rate in 1.0f64..100.0) {
            let p = SelectionPolicy::with_band(Band::Top, rate).unwrap();
            let mut a = filled(&scores);
            let mut b = a.clone();
            prop_assert_eq!(a.decide(s, &p).unwrap(), b.decide(s, &p).unwrap());
        }
    }
}
