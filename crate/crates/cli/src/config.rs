use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use idslab_core::harness::ReplaySampling;
use idslab_core::stream::{self, Dataset, Splits, SyntheticSpec};
use idslab_core::{AcquisitionMethod, IdsConfig};
use serde::{Deserialize, Serialize};

/// Where the pool, validation and test sets come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    Synthetic(SyntheticSpec),
    /// Three pre-split embedding files (PKEM, or CSV by extension).
    Files {
        pool: PathBuf,
        validation: PathBuf,
        test: PathBuf,
    },
    /// One embedding file, split by seeded shuffle.
    Embeddings {
        path: PathBuf,
        #[serde(default = "default_fractions")]
        fractions: [f64; 3],
        #[serde(default)]
        seed: u64,
    },
}

fn default_fractions() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

impl SourceConfig {
    pub fn build(&self) -> Result<Splits> {
        Ok(match self {
            SourceConfig::Synthetic(spec) => spec.build()?,
            SourceConfig::Files { pool, validation, test } => {
                let load = |p: &Path| Dataset::load(p).with_context(|| format!("loading {}", p.display()));
                let splits = Splits { pool: load(pool)?, validation: load(validation)?, test: load(test)? };
                let (c, d) = (splits.pool.num_classes, splits.pool.feature_dim);
                for (name, ds) in [("validation", &splits.validation), ("test", &splits.test)] {
                    if ds.feature_dim != d {
                        bail!("{name} set has dimension {} but the pool has {d}", ds.feature_dim);
                    }
                    if ds.num_classes > c {
                        bail!("{name} set has {} classes but the pool has {c}", ds.num_classes);
                    }
                }
                // the harness sizes the model from the pool
                Splits {
                    validation: Dataset::new(c, d, splits.validation.examples)?,
                    test: Dataset::new(c, d, splits.test.examples)?,
                    pool: splits.pool,
                }
            }
            SourceConfig::Embeddings { path, fractions, seed } => {
                let ds = Dataset::load(path).with_context(|| format!("loading {}", path.display()))?;
                stream::split(&ds, *fractions, *seed)?
            }
        })
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            SourceConfig::Synthetic(spec) => spec.seed = value,
            SourceConfig::Embeddings { seed, .. } => *seed = value,
            SourceConfig::Files { .. } => {}
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match self {
            SourceConfig::Synthetic(_) => {}
            SourceConfig::Files { pool, validation, test } => {
                fix(pool);
                fix(validation);
                fix(test);
            }
            SourceConfig::Embeddings { path, .. } => fix(path),
        }
    }
}

/// Sweep axes. Empty lists fall back to the single value in `ids`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub methods: Vec<AcquisitionMethod>,
    #[serde(default)]
    pub budgets: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// One experiment file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub source: SourceConfig,
    pub ids: IdsConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// Parses and validates `path`. Relative data paths are resolved against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.source.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if let SourceConfig::Synthetic(spec) = &self.source {
            spec.validate()?;
        }
        self.ids.validate()?;
        for &k in &self.sweep.budgets {
            IdsConfig { budget: k, ..self.ids.clone() }.validate().with_context(|| format!("sweep budget {k}"))?;
        }
        Ok(())
    }

    /// Sets the source seed and the run seed together.
    pub fn set_seed(&mut self, seed: u64) {
        self.source.set_seed(seed);
        self.ids.seed = seed;
    }

    pub fn methods(&self) -> Vec<AcquisitionMethod> {
        if self.sweep.methods.is_empty() {
            vec![self.ids.method]
        } else {
            self.sweep.methods.clone()
        }
    }

    pub fn budgets(&self) -> Vec<usize> {
        if self.sweep.budgets.is_empty() {
            vec![self.ids.budget]
        } else {
            self.sweep.budgets.clone()
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.sweep.seeds.is_empty() {
            vec![self.ids.seed]
        } else {
            self.sweep.seeds.clone()
        }
    }
}

/// A refresh period given on the command line: a count, or `inf` for never.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RefreshPeriod(pub Option<usize>);

impl FromStr for RefreshPeriod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "never" | "none" => Ok(RefreshPeriod(None)),
            n => match n.parse::<usize>() {
                Ok(0) | Err(_) => Err(format!("expected a positive count or `inf`, got {s:?}")),
                Ok(v) => Ok(RefreshPeriod(Some(v))),
            },
        }
    }
}

/// Command-line overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub method: Option<AcquisitionMethod>,
    pub budget: Option<usize>,
    pub rate: Option<f64>,
    pub tau: Option<RefreshPeriod>,
    pub replay: Option<ReplaySampling>,
    pub normalize_class_count: Option<bool>,
    pub deferred_merge: Option<bool>,
}

impl Overrides {
    /// Applies the overrides. A seed, method or budget given here also
    /// pins the matching sweep axis to that single value.
    pub fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
            cfg.sweep.seeds.clear();
        }
        if let Some(method) = self.method {
            cfg.ids.method = method;
            cfg.sweep.methods.clear();
        }
        if let Some(budget) = self.budget {
            cfg.ids.budget = budget;
            cfg.sweep.budgets.clear();
        }
        if let Some(rate) = self.rate {
            cfg.ids.selection_rate = rate;
        }
        if let Some(RefreshPeriod(tau)) = self.tau {
            cfg.ids.refresh_period = tau;
        }
        if let Some(replay) = self.replay {
            cfg.ids.replay = replay;
        }
        if let Some(flag) = self.normalize_class_count {
            cfg.ids.normalize_by_class_count = Some(flag);
        }
        if let Some(flag) = self.deferred_merge {
            cfg.ids.deferred_merge = flag;
        }
        cfg.validate()
    }
}
