use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::WeightInit;
use crate::scoring::{AcquisitionMethod, PrototypeSource, ScoringConfig};

/// How the `b − δ` replay slots of each selection-phase batch are filled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplaySampling {
    #[default]
    Uniform,
    /// Probability proportional to `1 / usage count`.
    CountInverse,
}

impl std::str::FromStr for ReplaySampling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "uniform" => Ok(ReplaySampling::Uniform),
            "count_inverse" => Ok(ReplaySampling::CountInverse),
            _ => Err(Error::InvalidArgument(format!("unknown replay sampling {s:?}"))),
        }
    }
}

/// Increment that spends about half of the `u` updates on selecting the
/// `k − m` examples: `ceil((k − m) / floor(u / 2))`, at least 1.
pub fn auto_delta(budget: usize, initial_size: usize, total_updates: usize) -> usize {
    let to_select = budget.saturating_sub(initial_size);
    let half = (total_updates / 2).max(1);
    to_select.div_ceil(half).max(1)
}

/// Hyperparameters of one incremental selection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdsConfig {
    /// Final training-set size `k`.
    pub budget: usize,
    /// Randomly drawn warm-start set size `m`.
    pub initial_size: usize,
    pub batch_size: usize,
    /// Examples selected per model update; `None` derives it with [`auto_delta`].
    #[serde(default)]
    pub delta: Option<usize>,
    /// Total SGD updates `u` across all three phases.
    pub total_updates: usize,
    pub init_updates: usize,
    pub lr: f64,
    /// Learning-rate multiplier applied when the final phase starts.
    #[serde(default = "default_decay")]
    pub final_lr_decay: f64,
    /// Selection rate `p` in percent.
    #[serde(default = "default_rate")]
    pub selection_rate: f64,
    /// Cache refresh period `τ` in model updates; `null` never refreshes.
    #[serde(default = "default_refresh")]
    pub refresh_period: Option<usize>,
    pub method: AcquisitionMethod,
    /// `None` uses the method default (on for the kernel scores only).
    #[serde(default)]
    pub normalize_by_class_count: Option<bool>,
    #[serde(default)]
    pub prototype_source: PrototypeSource,
    #[serde(default)]
    pub replay: ReplaySampling,
    #[serde(default)]
    pub deferred_merge: bool,
    #[serde(default = "default_candidate_batch")]
    pub candidate_batch_size: usize,
    /// Accuracy-curve cadence in updates; defaults to the refresh period.
    #[serde(default)]
    pub eval_every: Option<usize>,
    /// Consecutive rejections tolerated before the run fails as stalled.
    #[serde(default = "default_stall_limit")]
    pub stall_limit: usize,
    #[serde(default)]
    pub init: WeightInit,
    #[serde(default)]
    pub seed: u64,
}

fn default_decay() -> f64 {
    1.0
}
fn default_rate() -> f64 {
    20.0
}
fn default_refresh() -> Option<usize> {
    Some(100)
}
fn default_candidate_batch() -> usize {
    1
}
fn default_stall_limit() -> usize {
    1_000_000
}

impl IdsConfig {
    /// A config with the fields every run must state and defaults elsewhere.
    pub fn new(method: AcquisitionMethod, budget: usize, initial_size: usize, total_updates: usize) -> Self {
        IdsConfig {
            budget,
            initial_size,
            batch_size: 32,
            delta: None,
            total_updates,
            init_updates: total_updates / 4,
            lr: 0.05,
            final_lr_decay: default_decay(),
            selection_rate: default_rate(),
            refresh_period: default_refresh(),
            method,
            normalize_by_class_count: None,
            prototype_source: PrototypeSource::default(),
            replay: ReplaySampling::default(),
            deferred_merge: false,
            candidate_batch_size: default_candidate_batch(),
            eval_every: None,
            stall_limit: default_stall_limit(),
            init: WeightInit::default(),
            seed: 0,
        }
    }

    pub fn delta(&self) -> usize {
        self.delta.unwrap_or_else(|| auto_delta(self.budget, self.initial_size, self.total_updates))
    }

    pub fn scoring(&self) -> ScoringConfig {
        let mut s = ScoringConfig::new(self.method);
        if let Some(flag) = self.normalize_by_class_count {
            s.normalize_by_class_count = flag;
        }
        s.prototype_source = self.prototype_source;
        s
    }

    pub fn selection_updates(&self) -> usize {
        (self.budget - self.initial_size).div_ceil(self.delta())
    }

    pub fn eval_every(&self) -> usize {
        self.eval_every.or(self.refresh_period).unwrap_or((self.total_updates / 10).max(1)).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.initial_size == 0 {
            return bad("initial_size must be >= 1".into());
        }
        if self.initial_size >= self.budget {
            return bad(format!("initial_size {} must be below budget {}", self.initial_size, self.budget));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        let delta = self.delta();
        if delta == 0 || delta > self.batch_size {
            return bad(format!("delta {delta} must be in [1, batch_size = {}]", self.batch_size));
        }
        if !(self.selection_rate > 0.0 && self.selection_rate <= 100.0) {
            return bad(format!("selection_rate must be in (0, 100], got {}", self.selection_rate));
        }
        if self.refresh_period == Some(0) {
            return bad("refresh_period must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.final_lr_decay > 0.0 && self.final_lr_decay.is_finite()) {
            return bad(format!("final_lr_decay must be positive, got {}", self.final_lr_decay));
        }
        if self.candidate_batch_size == 0 {
            return bad("candidate_batch_size must be >= 1".into());
        }
        if self.stall_limit == 0 {
            return bad("stall_limit must be >= 1".into());
        }
        if self.eval_every == Some(0) {
            return bad("eval_every must be >= 1".into());
        }
        let needed = self.init_updates + self.selection_updates();
        if needed > self.total_updates {
            return bad(format!(
                "total_updates {} cannot cover {} initial + {} selection updates",
                self.total_updates,
                self.init_updates,
                self.selection_updates()
            ));
        }
        Ok(())
    }
}
