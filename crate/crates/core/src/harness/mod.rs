//! The incremental selection loop: warm start on a random subset, stream
//! candidates through the acquisition score and percentile filter while
//! training, then fine-tune on the final selection.

mod batch;
mod config;
mod output;

pub use batch::{count_inverse_weights, form_batch, sample_uniform, sample_weighted};
pub use config::{auto_delta, IdsConfig, ReplaySampling};
pub use output::{
    read_candidates_csv, read_selected_csv, read_usage_csv, write_accuracy_csv, write_candidates_csv,
    write_selected_csv, write_usage_csv,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LinearSoftmax;
use crate::scoring::{ClassPrototypes, ScoringConfig};
use crate::selection::{ClassCounts, ScoreCache, SelectionPolicy, UsageCounts};
use crate::stream::{Draw, Example, PoolSource, Splits};

// Independent ChaCha streams per concern, so the warm start is identical
// across methods that share a seed.
const STREAM_INIT: u64 = 1;
const STREAM_CANDIDATES: u64 = 2;
const STREAM_BATCHES: u64 = 3;
const STREAM_SCORES: u64 = 4;
const STREAM_WEIGHTS: u64 = 5;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Init,
    Selection,
    Finetune,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Validation,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub update: usize,
    pub split: EvalSplit,
    pub accuracy: f64,
}

/// One streamed candidate and what the filter made of it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    /// Selection-phase update index the candidate was scored under.
    pub step: usize,
    pub id: u64,
    pub label: usize,
    pub raw_score: f64,
    pub score: f64,
    pub percentile: f64,
    pub accepted: bool,
}

/// A member of the final training set. `step` is `None` for the warm start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedRecord {
    pub id: u64,
    pub label: usize,
    pub step: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateCounts {
    pub init: usize,
    pub selection: usize,
    pub finetune: usize,
}

impl UpdateCounts {
    pub fn total(&self) -> usize {
        self.init + self.selection + self.finetune
    }
}

/// Everything a run produced.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub config: IdsConfig,
    /// False when the source ran dry or stalled before the budget was met.
    pub complete: bool,
    pub final_test_accuracy: f64,
    pub accuracy_curve: Vec<AccuracyPoint>,
    pub initial_ids: Vec<u64>,
    /// Final training set in merge order, warm start first.
    pub selected: Vec<SelectedRecord>,
    pub candidates: Vec<CandidateRecord>,
    pub usage: UsageCounts,
    pub class_counts: ClassCounts,
    pub updates: UpdateCounts,
    pub cache_refreshes: usize,
    /// Model at the end of the warm-start phase.
    pub initial_model: Option<LinearSoftmax>,
    pub final_model: LinearSoftmax,
}

impl RunResult {
    pub fn selected_ids(&self) -> Vec<u64> {
        self.selected.iter().map(|s| s.id).collect()
    }

    /// Ids selected after the warm start.
    pub fn acquired_ids(&self) -> Vec<u64> {
        self.selected.iter().filter(|s| s.step.is_some()).map(|s| s.id).collect()
    }
}

/// A run in progress. Drive it with [`Run::initialize`], [`Run::select`] and
/// [`Run::finetune`], or use [`run`] for all three.
pub struct Run<'a> {
    config: IdsConfig,
    scoring: ScoringConfig,
    policy: SelectionPolicy,
    splits: &'a Splits,
    prototypes: Option<ClassPrototypes>,
    model: LinearSoftmax,
    source: PoolSource<'a>,
    selected: Vec<&'a Example>,
    records: Vec<SelectedRecord>,
    pending: Vec<(&'a Example, usize)>,
    cache: ScoreCache,
    class_counts: ClassCounts,
    usage: UsageCounts,
    candidates: Vec<CandidateRecord>,
    curve: Vec<AccuracyPoint>,
    updates: UpdateCounts,
    initial_model: Option<LinearSoftmax>,
    init_rng: ChaCha8Rng,
    candidate_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    score_rng: ChaCha8Rng,
}

impl<'a> Run<'a> {
    pub fn new(config: IdsConfig, splits: &'a Splits) -> Result<Self> {
        config.validate()?;
        if splits.pool.is_empty() || splits.test.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let scoring = config.scoring();
        let prototypes = if scoring.needs_validation() {
            if splits.validation.is_empty() {
                return Err(Error::Config(format!("{} needs a validation set", config.method)));
            }
            Some(ClassPrototypes::compute(&splits.validation))
        } else {
            None
        };
        let seed = config.seed;
        Ok(Run {
            policy: SelectionPolicy::new(config.method, config.selection_rate)?,
            cache: ScoreCache::new(config.refresh_period)?,
            model: LinearSoftmax::init(
                splits.num_classes(),
                splits.feature_dim(),
                config.init,
                stream_rng_seed(seed, STREAM_WEIGHTS),
            ),
            scoring,
            splits,
            prototypes,
            source: PoolSource::new(&splits.pool),
            selected: Vec::new(),
            records: Vec::new(),
            pending: Vec::new(),
            class_counts: ClassCounts::new(splits.num_classes()),
            usage: UsageCounts::default(),
            candidates: Vec::new(),
            curve: Vec::new(),
            updates: UpdateCounts::default(),
            initial_model: None,
            init_rng: stream_rng(seed, STREAM_INIT),
            candidate_rng: stream_rng(seed, STREAM_CANDIDATES),
            batch_rng: stream_rng(seed, STREAM_BATCHES),
            score_rng: stream_rng(seed, STREAM_SCORES),
            config,
        })
    }

    pub fn model(&self) -> &LinearSoftmax {
        &self.model
    }

    pub fn selected(&self) -> &[&'a Example] {
        &self.selected
    }

    pub fn source(&self) -> &PoolSource<'a> {
        &self.source
    }

    pub fn class_counts(&self) -> &ClassCounts {
        &self.class_counts
    }

    pub fn prototypes(&self) -> Option<&ClassPrototypes> {
        self.prototypes.as_ref()
    }

    pub fn scoring(&self) -> &ScoringConfig {
        &self.scoring
    }

    fn evaluate(&mut self) -> Result<()> {
        let update = self.updates.total();
        if self.curve.last().is_some_and(|p| p.update == update) {
            return Ok(());
        }
        if !self.splits.validation.is_empty() {
            let accuracy = self.model.accuracy(self.splits.validation.labeled())?;
            self.curve.push(AccuracyPoint { update, split: EvalSplit::Validation, accuracy });
        }
        let accuracy = self.model.accuracy(self.splits.test.labeled())?;
        self.curve.push(AccuracyPoint { update, split: EvalSplit::Test, accuracy });
        Ok(())
    }

    fn step(&mut self, batch: &[&Example], lr: f64, phase: Phase) -> Result<()> {
        let pairs: Vec<(&[f64], usize)> = batch.iter().map(|e| (e.features.as_slice(), e.label)).collect();
        self.model.sgd_step(&pairs, lr)?;
        match phase {
            Phase::Init => self.updates.init += 1,
            Phase::Selection => self.updates.selection += 1,
            Phase::Finetune => self.updates.finetune += 1,
        }
        if self.updates.total().is_multiple_of(self.config.eval_every()) {
            self.evaluate()?;
        }
        Ok(())
    }

    fn merge(&mut self, example: &'a Example, step: Option<usize>) {
        self.selected.push(example);
        self.records.push(SelectedRecord { id: example.id, label: example.label, step });
        self.class_counts.increment(example.label);
        self.usage.touch(example.id);
    }

    fn flush_pending(&mut self) {
        for (e, step) in std::mem::take(&mut self.pending) {
            self.merge(e, Some(step));
        }
    }

    /// Draws the random warm-start set and trains on it for `init_updates`.
    pub fn initialize(&mut self) -> Result<()> {
        self.evaluate()?;
        for _ in 0..self.config.initial_size {
            match self.source.draw(&mut self.init_rng) {
                Draw::Example(e) => {
                    self.source.exclude(e.id);
                    self.merge(e, None);
                }
                Draw::Exhausted => return Err(self.exhausted()),
            }
        }
        log::debug!("warm start: {} examples, {} updates", self.selected.len(), self.config.init_updates);
        for _ in 0..self.config.init_updates {
            let batch = sample_uniform(&self.selected, self.config.batch_size, &mut self.init_rng);
            self.step(&batch, self.config.lr, Phase::Init)?;
        }
        self.initial_model = Some(self.model.clone());
        Ok(())
    }

    fn collected(&self) -> usize {
        self.selected.len() + self.pending.len()
    }

    /// Streams candidates until the budget is met, one model update per
    /// `delta` acceptances.
    pub fn select(&mut self) -> Result<()> {
        let delta = self.config.delta();
        while self.collected() < self.config.budget {
            let step = self.updates.selection;
            let need = delta.min(self.config.budget - self.collected());
            let mut accepted: Vec<&'a Example> = Vec::with_capacity(need);
            let mut rejections = 0usize;
            while accepted.len() < need {
                let cands = self.source.draw_many(self.config.candidate_batch_size, &mut self.candidate_rng);
                if cands.is_empty() || rejections >= self.config.stall_limit {
                    for e in accepted {
                        self.pending.push((e, step));
                    }
                    self.flush_pending();
                    return Err(if cands.is_empty() { self.exhausted() } else { self.stalled() });
                }
                let mut raws = Vec::with_capacity(cands.len());
                for e in &cands {
                    let pred = self.model.forward(&e.features)?;
                    raws.push(self.scoring.raw_score(
                        &self.model,
                        &pred,
                        &e.features,
                        e.label,
                        self.prototypes.as_ref(),
                        &mut self.score_rng,
                    )?);
                }
                // scores are normalised and ranked one at a time; leftovers
                // after the increment fills are dropped unrecorded
                for (e, raw) in cands.into_iter().zip(raws) {
                    let score = self.scoring.finalize(raw, self.class_counts.get(e.label));
                    let decision = self.cache.decide(score, &self.policy)?;
                    self.candidates.push(CandidateRecord {
                        step,
                        id: e.id,
                        label: e.label,
                        raw_score: raw,
                        score,
                        percentile: decision.percentile,
                        accepted: decision.accepted,
                    });
                    if !decision.accepted {
                        rejections += 1;
                    } else {
                        rejections = 0;
                        self.source.exclude(e.id);
                        accepted.push(e);
                        if accepted.len() == need {
                            break;
                        }
                    }
                }
            }

            let batch = form_batch(
                &accepted,
                &self.selected,
                self.config.replay,
                self.config.batch_size,
                &mut self.usage,
                &mut self.batch_rng,
            );
            self.step(&batch, self.config.lr, Phase::Selection)?;
            if self.config.deferred_merge {
                self.pending.extend(accepted.into_iter().map(|e| (e, step)));
            } else {
                for e in accepted {
                    self.merge(e, Some(step));
                }
            }
            if self.cache.on_model_update() {
                self.flush_pending();
            }
        }
        self.flush_pending();
        log::debug!(
            "selection done: {} examples after {} updates, {} candidates",
            self.selected.len(),
            self.updates.selection,
            self.candidates.len()
        );
        Ok(())
    }

    /// Spends the remaining updates on uniform batches of the final set at
    /// the decayed learning rate.
    pub fn finetune(&mut self) -> Result<()> {
        let lr = self.config.lr * self.config.final_lr_decay;
        let remaining = self.config.total_updates.saturating_sub(self.updates.total());
        for _ in 0..remaining {
            let batch = sample_uniform(&self.selected, self.config.batch_size, &mut self.batch_rng);
            self.step(&batch, lr, Phase::Finetune)?;
        }
        self.evaluate()
    }

    fn exhausted(&mut self) -> Error {
        log::warn!("source exhausted with {} of {} selected", self.collected(), self.config.budget);
        match self.evaluate() {
            Ok(()) => Error::Exhausted(Box::new(self.snapshot(false))),
            Err(e) => e,
        }
    }

    fn stalled(&mut self) -> Error {
        log::warn!("selection stalled with {} of {} selected", self.collected(), self.config.budget);
        match self.evaluate() {
            Ok(()) => Error::Stalled(Box::new(self.snapshot(false))),
            Err(e) => e,
        }
    }

    fn snapshot(&self, complete: bool) -> RunResult {
        let final_test_accuracy =
            self.curve.iter().rev().find(|p| p.split == EvalSplit::Test).map_or(f64::NAN, |p| p.accuracy);
        RunResult {
            config: self.config.clone(),
            complete,
            final_test_accuracy,
            accuracy_curve: self.curve.clone(),
            initial_ids: self.records.iter().filter(|r| r.step.is_none()).map(|r| r.id).collect(),
            selected: self.records.clone(),
            candidates: self.candidates.clone(),
            usage: self.usage.clone(),
            class_counts: self.class_counts.clone(),
            updates: self.updates,
            cache_refreshes: self.cache.refreshes(),
            initial_model: self.initial_model.clone(),
            final_model: self.model.clone(),
        }
    }

    pub fn finish(self) -> RunResult {
        self.snapshot(true)
    }
}

fn stream_rng_seed(seed: u64, stream: u64) -> u64 {
    use rand::Rng;
    stream_rng(seed, stream).random()
}

/// Runs all three phases.
pub fn run(config: IdsConfig, splits: &Splits) -> Result<RunResult> {
    let mut r = Run::new(config, splits)?;
    r.initialize()?;
    r.select()?;
    r.finetune()?;
    Ok(r.finish())
}
