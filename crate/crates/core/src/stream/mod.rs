//! Data sources for the selection loop.
//!
//! Everything is materialised in memory: a [`Dataset`] is a list of
//! [`Example`]s, [`Splits`] bundles the streaming pool with its held-out
//! validation and test sets, and [`PoolSource`] serves uniform draws from the
//! part of the pool that has not been selected yet.

mod format;
mod source;
mod synthetic;

pub use format::{read_csv, read_pkem, write_csv, write_pkem, PKEM_MAGIC, PKEM_VERSION, UNKNOWN_LABEL};
pub use source::{Draw, PoolSource};
pub use synthetic::{ClassPrior, SyntheticSpec};

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub features: Vec<f64>,
    /// Observed (possibly corrupted) label.
    pub label: usize,
    /// Ground truth when known. Only noise audits may read this.
    pub clean_label: Option<usize>,
}

impl Example {
    pub fn is_noisy(&self) -> Option<bool> {
        self.clean_label.map(|c| c != self.label)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn new(num_classes: usize, feature_dim: usize, examples: Vec<Example>) -> Result<Self> {
        let ds = Dataset { num_classes, feature_dim, examples };
        ds.validate()?;
        Ok(ds)
    }

    pub fn empty(num_classes: usize, feature_dim: usize) -> Self {
        Dataset { num_classes, feature_dim, examples: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.examples.len());
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.features.len() != self.feature_dim {
                return Err(Error::DimensionMismatch { expected: self.feature_dim, got: ex.features.len() });
            }
            for l in std::iter::once(ex.label).chain(ex.clean_label) {
                if l >= self.num_classes {
                    return Err(FormatError::LabelOutOfRange {
                        record: i,
                        label: l as u32,
                        classes: self.num_classes as u32,
                    }
                    .into());
                }
            }
            if let Some(index) = ex.features.iter().position(|v| !v.is_finite()) {
                return Err(FormatError::NonFiniteFeature { record: i, index }.into());
            }
            if !seen.insert(ex.id) {
                return Err(FormatError::DuplicateId(ex.id).into());
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// `(features, label)` pairs, the shape the model consumes.
    pub fn labeled(&self) -> impl Iterator<Item = (&[f64], usize)> + '_ {
        self.examples.iter().map(|e| (e.features.as_slice(), e.label))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for e in &self.examples {
            counts[e.label] += 1;
        }
        counts
    }

    pub fn load(path: &Path) -> Result<Self> {
        let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
        if is_csv {
            read_csv(std::fs::File::open(path)?)
        } else {
            read_pkem(std::io::BufReader::new(std::fs::File::open(path)?))
        }
    }
}

/// The streaming pool plus held-out sets.
#[derive(Clone, Debug)]
pub struct Splits {
    pub pool: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn num_classes(&self) -> usize {
        self.pool.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.pool.feature_dim
    }

    /// Everything, pool first, as one dataset (ids stay unique).
    pub fn concat(&self) -> Dataset {
        let mut examples = self.pool.examples.clone();
        examples.extend(self.validation.examples.iter().cloned());
        examples.extend(self.test.examples.iter().cloned());
        Dataset { num_classes: self.pool.num_classes, feature_dim: self.pool.feature_dim, examples }
    }
}

/// Seeded shuffle into (pool, validation, test). Validation and test sizes
/// are `floor(fraction · n)`; the remainder goes to the pool.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidArgument(format!("split fractions out of range: {fractions:?}")));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions must sum to 1, got {total}")));
    }
    let n = dataset.len();
    let n_val = (fractions[1] * n as f64).floor() as usize;
    let n_test = (fractions[2] * n as f64).floor() as usize;
    let n_pool = n - n_val - n_test;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| Dataset {
        num_classes: dataset.num_classes,
        feature_dim: dataset.feature_dim,
        examples: idx.iter().map(|&i| dataset.examples[i].clone()).collect(),
    };
    Ok(Splits {
        pool: take(&order[..n_pool]),
        validation: take(&order[n_pool..n_pool + n_val]),
        test: take(&order[n_pool + n_val..]),
    })
}
