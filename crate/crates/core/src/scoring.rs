//! Acquisition scores.
//!
//! Under last-layer training the tangent kernel between two inputs is
//! `φ_vᵀφ_p` on the class diagonal and zero elsewhere. One SGD step on a
//! candidate `(φ_p, y_p)` therefore moves the logits of any probe `φ_v` by
//! `η (φ_vᵀφ_p)(y_p − σ_p)`, and the net gain on same-class probes,
//! `Δf_v[y_p] − Σ_{i≠y_p} Δf_v[i]`, collapses to `E(φ_p) · φ_vᵀφ_p` where
//! `E = 2(1 − σ_p[y_p])`. Averaging over the validation examples of class
//! `y_p` gives PEAKS-V; swapping the class mean for the read-out row
//! `W[y_p]` gives PEAKS, `E · f(φ_p)[y_p]`.
//!
//! [`score_exact_delta`] evaluates the per-probe logit changes and combines
//! them directly, so it serves as an independent route to [`score_peaks_v`].

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{kernel_logit_delta, last_layer_kernel, prediction_error, LinearSoftmax, Prediction};
use crate::numerics::{argmax, cosine_similarity, dot, norm};
use crate::stream::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionMethod {
    Random,
    ExactDelta,
    PeaksV,
    Peaks,
    El2n,
    Grand,
    Uncertainty,
    WrongLowConf,
    EasyEmb,
    ModerateEmb,
    HardEmb,
}

impl AcquisitionMethod {
    pub const ALL: [AcquisitionMethod; 11] = [
        AcquisitionMethod::Random,
        AcquisitionMethod::ExactDelta,
        AcquisitionMethod::PeaksV,
        AcquisitionMethod::Peaks,
        AcquisitionMethod::El2n,
        AcquisitionMethod::Grand,
        AcquisitionMethod::Uncertainty,
        AcquisitionMethod::WrongLowConf,
        AcquisitionMethod::EasyEmb,
        AcquisitionMethod::ModerateEmb,
        AcquisitionMethod::HardEmb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AcquisitionMethod::Random => "random",
            AcquisitionMethod::ExactDelta => "exact_delta",
            AcquisitionMethod::PeaksV => "peaks_v",
            AcquisitionMethod::Peaks => "peaks",
            AcquisitionMethod::El2n => "el2n",
            AcquisitionMethod::Grand => "grand",
            AcquisitionMethod::Uncertainty => "uncertainty",
            AcquisitionMethod::WrongLowConf => "wrong_low_conf",
            AcquisitionMethod::EasyEmb => "easy_emb",
            AcquisitionMethod::ModerateEmb => "moderate_emb",
            AcquisitionMethod::HardEmb => "hard_emb",
        }
    }

    /// The kernel-derived scores, which are class-count normalised by default.
    pub fn is_peaks_family(self) -> bool {
        matches!(self, AcquisitionMethod::ExactDelta | AcquisitionMethod::PeaksV | AcquisitionMethod::Peaks)
    }

    pub fn is_embedding(self) -> bool {
        matches!(self, AcquisitionMethod::EasyEmb | AcquisitionMethod::ModerateEmb | AcquisitionMethod::HardEmb)
    }

    /// Whether scoring needs validation class means under `source`.
    pub fn needs_validation(self, source: PrototypeSource) -> bool {
        match self {
            AcquisitionMethod::ExactDelta | AcquisitionMethod::PeaksV => true,
            m if m.is_embedding() => source == PrototypeSource::ValidationMeans,
            _ => false,
        }
    }
}

impl fmt::Display for AcquisitionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AcquisitionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        AcquisitionMethod::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method {s:?}")))
    }
}

/// Where class prototypes for embedding scores come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeSource {
    #[default]
    ValidationMeans,
    ReadoutWeights,
}

/// Per-class mean validation embeddings, plus the validation features
/// themselves for the exact score.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrototypes {
    means: Vec<Option<Vec<f64>>>,
    members: Vec<Vec<Vec<f64>>>,
}

impl ClassPrototypes {
    pub fn compute(validation: &Dataset) -> Self {
        let (c, d) = (validation.num_classes, validation.feature_dim);
        let mut members: Vec<Vec<Vec<f64>>> = vec![Vec::new(); c];
        for e in &validation.examples {
            members[e.label].push(e.features.clone());
        }
        let means = members
            .iter()
            .map(|rows| {
                if rows.is_empty() {
                    return None;
                }
                let mut sum = vec![0.0; d];
                for r in rows {
                    for (s, x) in sum.iter_mut().zip(r) {
                        *s += x;
                    }
                }
                Some(sum.into_iter().map(|s| s / rows.len() as f64).collect())
            })
            .collect();
        ClassPrototypes { means, members }
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn mean(&self, class: usize) -> Result<&[f64]> {
        self.means.get(class).and_then(|m| m.as_deref()).ok_or(Error::MissingPrototype(class))
    }

    pub fn members(&self, class: usize) -> Result<&[Vec<f64>]> {
        match self.members.get(class) {
            Some(rows) if !rows.is_empty() => Ok(rows),
            _ => Err(Error::MissingPrototype(class)),
        }
    }
}

fn check_features(model: &LinearSoftmax, features: &[f64]) -> Result<()> {
    if features.len() != model.feature_dim() {
        return Err(Error::DimensionMismatch { expected: model.feature_dim(), got: features.len() });
    }
    Ok(())
}

fn check_label(len: usize, label: usize) -> Result<()> {
    if label >= len {
        return Err(Error::LabelOutOfRange { label, classes: len });
    }
    Ok(())
}

/// Logit change of probe `φ_v` after one single-example SGD step on
/// `(φ_p, y_p)`, divided by the learning rate: `(φ_vᵀφ_p)(y_p − σ(f(φ_p)))`.
pub fn exact_logit_delta(model: &LinearSoftmax, candidate: &[f64], label: usize, probe: &[f64]) -> Result<Vec<f64>> {
    check_features(model, probe)?;
    let pred = model.forward(candidate)?;
    check_label(pred.probs.len(), label)?;
    Ok(kernel_logit_delta(&pred.probs, label, last_layer_kernel(probe, candidate)))
}

fn exact_delta_from(pred: &Prediction, candidate: &[f64], label: usize, prototypes: &ClassPrototypes) -> Result<f64> {
    let probes = prototypes.members(label)?;
    let mut total = 0.0;
    for probe in probes {
        let delta = kernel_logit_delta(&pred.probs, label, last_layer_kernel(probe, candidate));
        let wrong: f64 = delta.iter().enumerate().filter(|(i, _)| *i != label).map(|(_, v)| v).sum();
        total += delta[label] - wrong;
    }
    Ok(total / probes.len() as f64)
}

/// Mean over same-class validation probes of
/// `Δf_v[y_p] − Σ_{i≠y_p} Δf_v[i]`, computed from explicit logit deltas.
pub fn score_exact_delta(
    model: &LinearSoftmax,
    candidate: &[f64],
    label: usize,
    prototypes: &ClassPrototypes,
) -> Result<f64> {
    let pred = model.forward(candidate)?;
    check_label(pred.probs.len(), label)?;
    exact_delta_from(&pred, candidate, label, prototypes)
}

fn peaks_v_from(pred: &Prediction, candidate: &[f64], label: usize, prototypes: &ClassPrototypes) -> Result<f64> {
    let mean = prototypes.mean(label)?;
    Ok(prediction_error(&pred.probs, label)? * dot(candidate, mean))
}

/// `E(φ_p) · ⟨φ_p, mean validation embedding of class y_p⟩`.
pub fn score_peaks_v(
    model: &LinearSoftmax,
    candidate: &[f64],
    label: usize,
    prototypes: &ClassPrototypes,
) -> Result<f64> {
    let pred = model.forward(candidate)?;
    check_label(pred.probs.len(), label)?;
    peaks_v_from(&pred, candidate, label, prototypes)
}

fn peaks_from(pred: &Prediction, label: usize) -> Result<f64> {
    Ok(prediction_error(&pred.probs, label)? * pred.logits[label])
}

/// `E(φ_p) · f(φ_p)[y_p]`, with the read-out row standing in for the class mean.
pub fn score_peaks(model: &LinearSoftmax, candidate: &[f64], label: usize) -> Result<f64> {
    let pred = model.forward(candidate)?;
    check_label(pred.probs.len(), label)?;
    peaks_from(&pred, label)
}

/// `‖σ − onehot(y)‖₂`
pub fn score_el2n(probs: &[f64], label: usize) -> Result<f64> {
    check_label(probs.len(), label)?;
    let sq: f64 = probs
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let e = p - if i == label { 1.0 } else { 0.0 };
            e * e
        })
        .sum();
    Ok(sq.sqrt())
}

/// Frobenius norm of the last-layer gradient `(σ − y)φᵀ`, i.e.
/// `‖σ − y‖₂ · ‖φ‖₂`.
pub fn score_grand(probs: &[f64], label: usize, features: &[f64]) -> Result<f64> {
    Ok(score_el2n(probs, label)? * norm(features))
}

/// Least confidence, `1 − max σ`.
pub fn score_uncertainty(probs: &[f64]) -> f64 {
    1.0 - probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Zero for correct predictions, least confidence otherwise.
pub fn score_wrong_low_conf(probs: &[f64], label: usize) -> Result<f64> {
    check_label(probs.len(), label)?;
    if argmax(probs) == Some(label) {
        Ok(0.0)
    } else {
        Ok(score_uncertainty(probs))
    }
}

/// Cosine similarity between the candidate and its class prototype.
pub fn score_embedding(features: &[f64], prototype: &[f64]) -> Result<f64> {
    cosine_similarity(features, prototype)
}

/// Divides by the class's current selected count, treating zero as one.
pub fn normalize_by_class_count(score: f64, count: usize) -> f64 {
    score / count.max(1) as f64
}

/// Method plus its flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub method: AcquisitionMethod,
    pub normalize_by_class_count: bool,
    pub prototype_source: PrototypeSource,
}

impl ScoringConfig {
    /// Class-count normalisation on for the kernel scores, off elsewhere.
    pub fn new(method: AcquisitionMethod) -> Self {
        ScoringConfig {
            method,
            normalize_by_class_count: method.is_peaks_family(),
            prototype_source: PrototypeSource::default(),
        }
    }

    pub fn needs_validation(&self) -> bool {
        self.method.needs_validation(self.prototype_source)
    }

    /// Raw (unnormalised) score of a candidate, given its forward pass.
    /// `Random` draws from `rng`; every other method is deterministic.
    pub fn raw_score<R: Rng + ?Sized>(
        &self,
        model: &LinearSoftmax,
        pred: &Prediction,
        features: &[f64],
        label: usize,
        prototypes: Option<&ClassPrototypes>,
        rng: &mut R,
    ) -> Result<f64> {
        check_label(pred.probs.len(), label)?;
        let protos = || prototypes.ok_or(Error::MissingPrototype(label));
        match self.method {
            AcquisitionMethod::Random => Ok(rng.random::<f64>()),
            AcquisitionMethod::ExactDelta => exact_delta_from(pred, features, label, protos()?),
            AcquisitionMethod::PeaksV => peaks_v_from(pred, features, label, protos()?),
            AcquisitionMethod::Peaks => peaks_from(pred, label),
            AcquisitionMethod::El2n => score_el2n(&pred.probs, label),
            AcquisitionMethod::Grand => score_grand(&pred.probs, label, features),
            AcquisitionMethod::Uncertainty => Ok(score_uncertainty(&pred.probs)),
            AcquisitionMethod::WrongLowConf => score_wrong_low_conf(&pred.probs, label),
            AcquisitionMethod::EasyEmb | AcquisitionMethod::ModerateEmb | AcquisitionMethod::HardEmb => {
                let prototype = match self.prototype_source {
                    PrototypeSource::ValidationMeans => protos()?.mean(label)?,
                    PrototypeSource::ReadoutWeights => model.class_weights(label),
                };
                score_embedding(features, prototype)
            }
        }
    }

    /// Applies class-count normalisation when enabled.
    pub fn finalize(&self, raw: f64, class_count: usize) -> f64 {
        if self.normalize_by_class_count {
            normalize_by_class_count(raw, class_count)
        } else {
            raw
        }
    }
}
