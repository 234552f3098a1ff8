//! Linear softmax read-out trained with plain SGD on cross-entropy.
//!
//! The weight matrix holds one row per class, so `logits = W · φ`. There is
//! no bias; append a constant feature if one is needed.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::numerics::{argmax, dot, softmax, DenseMatrix};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PKWT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Standard deviation of the optional Gaussian initialisation.
pub const GAUSSIAN_INIT_STD: f64 = 0.01;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    #[default]
    Zeros,
    Gaussian,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits).unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSoftmax {
    weights: DenseMatrix,
}

impl LinearSoftmax {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        LinearSoftmax { weights: DenseMatrix::zeros(num_classes, feature_dim) }
    }

    pub fn init(num_classes: usize, feature_dim: usize, init: WeightInit, seed: u64) -> Self {
        let mut model = Self::zeros(num_classes, feature_dim);
        if init == WeightInit::Gaussian {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, GAUSSIAN_INIT_STD).expect("valid std");
            for w in model.weights.as_mut_slice() {
                *w = normal.sample(&mut rng);
            }
        }
        model
    }

    pub fn from_weights(weights: DenseMatrix) -> Result<Self> {
        if weights.rows() == 0 || weights.cols() == 0 {
            return Err(Error::InvalidArgument("model needs at least one class and feature".into()));
        }
        if !weights.is_finite() {
            return Err(Error::InvalidArgument("non-finite weights".into()));
        }
        Ok(LinearSoftmax { weights })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    /// Read-out vector of class `c`, the learned prototype for that class.
    pub fn class_weights(&self, c: usize) -> &[f64] {
        self.weights.row(c)
    }

    fn check_dim(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch { expected: self.feature_dim(), got: features.len() });
        }
        Ok(())
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes() {
            return Err(Error::LabelOutOfRange { label, classes: self.num_classes() });
        }
        Ok(())
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.weights.matvec(features)
    }

    pub fn forward(&self, features: &[f64]) -> Result<Prediction> {
        let logits = self.logits(features)?;
        let probs = softmax(&logits)?;
        Ok(Prediction { logits, probs })
    }

    /// One SGD step on the mean cross-entropy of `batch`:
    /// `W ← W − (lr/|B|) Σ (σ(Wφ) − y) φᵀ`, with every σ taken at the
    /// pre-update weights.
    pub fn sgd_step(&mut self, batch: &[(&[f64], usize)], lr: f64) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
        }
        let (c, d) = (self.num_classes(), self.feature_dim());
        let mut grad = DenseMatrix::zeros(c, d);
        for &(features, label) in batch {
            self.check_dim(features)?;
            self.check_label(label)?;
            let probs = self.forward(features)?.probs;
            for (class, &p) in probs.iter().enumerate() {
                let err = p - if class == label { 1.0 } else { 0.0 };
                if err == 0.0 {
                    continue;
                }
                for (g, &x) in grad.row_mut(class).iter_mut().zip(features) {
                    *g += err * x;
                }
            }
        }
        let scale = lr / batch.len() as f64;
        for (w, g) in self.weights.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *w -= scale * g;
        }
        if !self.weights.is_finite() {
            return Err(Error::InvalidArgument("SGD step produced non-finite weights".into()));
        }
        Ok(())
    }

    /// Mean cross-entropy over `batch`.
    pub fn mean_loss(&self, batch: &[(&[f64], usize)]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for &(x, y) in batch {
            total += cross_entropy(&self.forward(x)?.probs, y)?;
        }
        Ok(total / batch.len() as f64)
    }

    /// Fraction of `data` whose arg-max logit equals the label (lowest class
    /// index wins ties).
    pub fn accuracy<'a, I>(&self, data: I) -> Result<f64>
    where
        I: IntoIterator<Item = (&'a [f64], usize)>,
    {
        let (mut hits, mut total) = (0usize, 0usize);
        for (x, y) in data {
            let logits = self.logits(x)?;
            if argmax(&logits) == Some(y) {
                hits += 1;
            }
            total += 1;
        }
        if total == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(hits as f64 / total as f64)
    }

    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(&CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&(self.num_classes() as u32).to_le_bytes())?;
        out.write_all(&(self.feature_dim() as u32).to_le_bytes())?;
        for w in self.weights.as_slice() {
            out.write_all(&w.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        if bytes.len() < 16 {
            return Err(FormatError::Truncated { expected: 16, found: bytes.len() as u64 }.into());
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic { found: magic, expected: CHECKPOINT_MAGIC }.into());
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let version = word(4);
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let (c, d) = (word(8) as usize, word(12) as usize);
        let expected = 16 + (c * d * 8) as u64;
        if (bytes.len() as u64) < expected {
            return Err(FormatError::Truncated { expected, found: bytes.len() as u64 }.into());
        }
        if (bytes.len() as u64) > expected {
            return Err(FormatError::TrailingBytes(bytes.len() as u64 - expected).into());
        }
        let values = bytes[16..].chunks_exact(8).map(|ch| f64::from_le_bytes(ch.try_into().unwrap())).collect();
        Self::from_weights(DenseMatrix::from_vec(c, d, values)?)
    }
}

/// `E = (1 − σ[y]) + Σ_{i≠y} σ[i]`, the total error mass of the softmax
/// output; equal to `2(1 − σ[y])` for a normalised distribution.
pub fn prediction_error(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange { label, classes: probs.len() });
    }
    let others: f64 = probs.iter().enumerate().filter(|(i, _)| *i != label).map(|(_, p)| p).sum();
    Ok((1.0 - probs[label]) + others)
}

pub fn cross_entropy(probs: &[f64], label: usize) -> Result<f64> {
    if label >= probs.len() {
        return Err(Error::LabelOutOfRange { label, classes: probs.len() });
    }
    Ok(-probs[label].max(1e-12).ln())
}

/// Logit change on a probe point predicted by one single-example SGD step on
/// `(φ_p, y_p)`, with the learning rate factored out:
/// `(φ_vᵀφ_p) · (y_p − σ(f(φ_p)))`.
pub(crate) fn kernel_logit_delta(probs_p: &[f64], label_p: usize, kernel: f64) -> Vec<f64> {
    probs_p.iter().enumerate().map(|(i, &p)| kernel * (if i == label_p { 1.0 } else { 0.0 } - p)).collect()
}

/// Kernel between two feature vectors under last-layer training.
pub(crate) fn last_layer_kernel(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_model(c: usize, d: usize, rng: &mut ChaCha8Rng) -> LinearSoftmax {
        let values = (0..c * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        LinearSoftmax::from_weights(DenseMatrix::from_vec(c, d, values).unwrap()).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = LinearSoftmax::zeros(4, 3);
        let p = m.forward(&[1.0, -2.0, 3.0]).unwrap();
        assert_eq!(p.logits, vec![0.0; 4]);
        for v in p.probs {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn unit_feature_selects_first_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(3, 4, &mut rng);
        let logits = m.logits(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        let column: Vec<f64> = (0..3).map(|r| m.weights().get(r, 0)).collect();
        assert_eq!(logits, column);
    }

    #[test]
    fn logits_match_naive_multiply() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = random_model(5, 7, &mut rng);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-2.0..2.0)).collect();
        let logits = m.logits(&x).unwrap();
        for (r, &got) in logits.iter().enumerate() {
            let mut acc = 0.0;
            for (c, &xc) in x.iter().enumerate() {
                acc += m.weights().get(r, c) * xc;
            }
            assert_abs_diff_eq!(got, acc, epsilon = 1e-14);
        }
        assert!(matches!(m.forward(&[1.0]), Err(Error::DimensionMismatch { expected: 7, got: 1 })));
    }

    #[test]
    fn prediction_error_examples() {
        assert_eq!(prediction_error(&[0.0, 1.0, 0.0], 1).unwrap(), 0.0);
        assert_abs_diff_eq!(prediction_error(&[0.25; 4], 2).unwrap(), 1.5, epsilon = 1e-15);
        assert_abs_diff_eq!(prediction_error(&[0.7, 0.2, 0.1], 0).unwrap(), 0.6, epsilon = 1e-15);
        assert!(prediction_error(&[0.5, 0.5], 2).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert_abs_diff_eq!(cross_entropy(&[0.25; 4], 0).unwrap(), 4f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(cross_entropy(&[0.5, 0.5], 0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(cross_entropy(&[0.0, 1.0], 0).unwrap(), -(1e-12f64).ln(), epsilon = 1e-9);
    }

    #[test]
    fn zero_gradient_leaves_weights() {
        // Saturated logits give one-hot probabilities in f64.
        let w = DenseMatrix::from_vec(2, 1, vec![1000.0, -1000.0]).unwrap();
        let mut m = LinearSoftmax::from_weights(w.clone()).unwrap();
        let x = [1.0];
        assert_eq!(m.forward(&x).unwrap().probs, vec![1.0, 0.0]);
        m.sgd_step(&[(&x, 0)], 0.5).unwrap();
        assert_eq!(m.weights(), &w);
    }

    #[test]
    fn single_step_closed_form() {
        // C=2, d=1, W=[[a],[b]], x, label 0:
        // σ0 = 1/(1+e^{(b-a)x}); W0 -= lr(σ0-1)x; W1 -= lr(σ1)x.
        let (a, b, x, lr) = (0.3, -0.2, 2.0, 0.1);
        let mut m = LinearSoftmax::from_weights(DenseMatrix::from_vec(2, 1, vec![a, b]).unwrap()).unwrap();
        let s0 = 1.0 / (1.0 + ((b - a) * x).exp());
        let s1 = 1.0 - s0;
        m.sgd_step(&[(&[x], 0)], lr).unwrap();
        assert_abs_diff_eq!(m.weights().get(0, 0), a - lr * (s0 - 1.0) * x, epsilon = 1e-15);
        assert_abs_diff_eq!(m.weights().get(1, 0), b - lr * s1 * x, epsilon = 1e-15);
    }

    #[test]
    fn small_steps_descend() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_model(3, 4, &mut rng);
        let xs: Vec<Vec<f64>> = (0..8).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let batch: Vec<(&[f64], usize)> = xs.iter().enumerate().map(|(i, x)| (x.as_slice(), i % 3)).collect();
        let before = m.mean_loss(&batch).unwrap();
        for lr in [1e-3, 1e-4] {
            let mut stepped = m.clone();
            stepped.sgd_step(&batch, lr).unwrap();
            assert!(stepped.mean_loss(&batch).unwrap() < before);
        }
    }

    #[test]
    fn sgd_rejects_bad_input() {
        let mut m = LinearSoftmax::zeros(2, 2);
        assert!(matches!(m.sgd_step(&[], 0.1), Err(Error::EmptyBatch)));
        assert!(matches!(m.sgd_step(&[(&[1.0], 0)], 0.1), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(m.sgd_step(&[(&[1.0, 0.0], 5)], 0.1), Err(Error::LabelOutOfRange { .. })));
        assert!(m.sgd_step(&[(&[1.0, 0.0], 0)], 0.0).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let m = LinearSoftmax::zeros(2, 1);
        let empty: Vec<(&[f64], usize)> = Vec::new();
        assert!(matches!(m.accuracy(empty), Err(Error::EmptyDataset)));
        // all-zero model predicts class 0 everywhere
        let x = [1.0];
        let data: Vec<(&[f64], usize)> = vec![(&x, 0), (&x, 1), (&x, 0), (&x, 1)];
        assert_eq!(m.accuracy(data).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_matches_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = random_model(4, 3, &mut rng);
        let xs: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let ys: Vec<usize> = (0..50).map(|_| rng.random_range(0..4)).collect();
        let mut hits = 0;
        for (x, &y) in xs.iter().zip(&ys) {
            let mut best = 0;
            for r in 1..4 {
                let lr: f64 = (0..3).map(|c| m.weights().get(r, c) * x[c]).sum();
                let lb: f64 = (0..3).map(|c| m.weights().get(best, c) * x[c]).sum();
                if lr > lb {
                    best = r;
                }
            }
            hits += usize::from(best == y);
        }
        let acc = m.accuracy(xs.iter().map(|x| x.as_slice()).zip(ys.iter().copied())).unwrap();
        assert_eq!(acc, hits as f64 / 50.0);
    }

    #[test]
    fn init_modes() {
        let z = LinearSoftmax::init(3, 5, WeightInit::Zeros, 9);
        assert_eq!((z.num_classes(), z.feature_dim()), (3, 5));
        assert!(z.weights().as_slice().iter().all(|&w| w == 0.0));
        let g1 = LinearSoftmax::init(3, 5, WeightInit::Gaussian, 9);
        let g2 = LinearSoftmax::init(3, 5, WeightInit::Gaussian, 9);
        assert_eq!(g1, g2);
        assert!(g1.weights().as_slice().iter().any(|&w| w != 0.0));
        assert_ne!(g1, LinearSoftmax::init(3, 5, WeightInit::Gaussian, 10));
    }

    #[test]
    fn checkpoint_round_trip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_model(3, 2, &mut rng);
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PKWT");
        assert_eq!(buf.len(), 16 + 3 * 2 * 8);
        assert_eq!(LinearSoftmax::read_checkpoint(buf.as_slice()).unwrap(), m);

        let short = &buf[..buf.len() - 1];
        assert!(matches!(LinearSoftmax::read_checkpoint(short), Err(Error::Format(FormatError::Truncated { .. }))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            LinearSoftmax::read_checkpoint(bad.as_slice()),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
    }

    proptest! {
        #[test]
        fn prediction_error_identity(logits in prop::collection::vec(-10.0f64..10.0, 2..12), pick in 0usize..12) {
            let probs = softmax(&logits).unwrap();
            let label = pick % probs.len();
            let e = prediction_error(&probs, label).unwrap();
            prop_assert!((e - 2.0 * (1.0 - probs[label])).abs() <= 1e-12);
            prop_assert!((0.0..=2.0).contains(&e));
        }
    }
}
