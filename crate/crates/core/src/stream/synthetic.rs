use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Example, Splits};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassPrior {
    Uniform,
    /// `p_c ∝ (c + 1)^(−alpha)`
    PowerLaw {
        alpha: f64,
    },
}

impl ClassPrior {
    pub fn weights(&self, num_classes: usize) -> Vec<f64> {
        match *self {
            ClassPrior::Uniform => vec![1.0; num_classes],
            ClassPrior::PowerLaw { alpha } => (0..num_classes).map(|c| ((c + 1) as f64).powf(-alpha)).collect(),
        }
    }
}

/// Gaussian class clusters around fixed unit directions scaled by
/// `separation`, with an optional long-tailed prior and symmetric label noise
/// on the pool. Validation and test sets are class-balanced and clean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub pool_size: usize,
    #[serde(default = "default_prior")]
    pub class_prior: ClassPrior,
    #[serde(default = "default_spread")]
    pub cluster_spread: f64,
    #[serde(default = "default_separation")]
    pub separation: f64,
    #[serde(default)]
    pub label_noise: f64,
    #[serde(default = "default_validation_size")]
    pub validation_size: usize,
    #[serde(default = "default_test_size")]
    pub test_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_prior() -> ClassPrior {
    ClassPrior::Uniform
}
fn default_spread() -> f64 {
    1.0
}
fn default_separation() -> f64 {
    3.0
}
fn default_validation_size() -> usize {
    2000
}
fn default_test_size() -> usize {
    4000
}

impl SyntheticSpec {
    pub fn new(num_classes: usize, feature_dim: usize, pool_size: usize) -> Self {
        SyntheticSpec {
            num_classes,
            feature_dim,
            pool_size,
            class_prior: default_prior(),
            cluster_spread: default_spread(),
            separation: default_separation(),
            label_noise: 0.0,
            validation_size: default_validation_size(),
            test_size: default_test_size(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad(format!("label_noise must be in [0, 1), got {}", self.label_noise));
        }
        if !(self.cluster_spread >= 0.0 && self.cluster_spread.is_finite()) {
            return bad(format!("cluster_spread must be finite and >= 0, got {}", self.cluster_spread));
        }
        if !self.separation.is_finite() {
            return bad("separation must be finite".into());
        }
        if let ClassPrior::PowerLaw { alpha } = self.class_prior {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return bad(format!("power-law alpha must be finite and >= 0, got {alpha}"));
            }
        }
        Ok(())
    }

    /// Materialises pool, validation and test sets. Bit-reproducible for a
    /// given set of fields. Features are rounded to `f32` so the data survives a trip
    /// through the embedding file format unchanged.
    pub fn build(&self) -> Result<Splits> {
        self.validate()?;
        let (c, d) = (self.num_classes, self.feature_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);

        let means: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.iter_mut().for_each(|x| *x *= self.separation / n);
                v
            })
            .collect();
        let noise = Normal::new(0.0, self.cluster_spread).map_err(|e| Error::Config(e.to_string()))?;

        let pool_prior = WeightedIndex::new(self.class_prior.weights(c)).map_err(|e| Error::Config(e.to_string()))?;
        let mut next_id = 0u64;
        let mut sample = |rng: &mut ChaCha8Rng, class: usize, label: usize| {
            let features = means[class].iter().map(|m| (m + noise.sample(rng)) as f32 as f64).collect();
            let id = next_id;
            next_id += 1;
            Example { id, features, label, clean_label: Some(class) }
        };

        let mut pool = Vec::with_capacity(self.pool_size);
        for _ in 0..self.pool_size {
            let class = pool_prior.sample(&mut rng);
            let label = if rng.random::<f64>() < self.label_noise {
                // uniform over the other classes
                let other = rng.random_range(0..c - 1);
                if other >= class {
                    other + 1
                } else {
                    other
                }
            } else {
                class
            };
            pool.push(sample(&mut rng, class, label));
        }
        let mut held_out = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Example> {
            (0..n)
                .map(|_| {
                    let class = rng.random_range(0..c);
                    sample(rng, class, class)
                })
                .collect()
        };
        let validation = held_out(self.validation_size, &mut rng);
        let test = held_out(self.test_size, &mut rng);

        Ok(Splits {
            pool: Dataset::new(c, d, pool)?,
            validation: Dataset::new(c, d, validation)?,
            test: Dataset::new(c, d, test)?,
        })
    }
}
