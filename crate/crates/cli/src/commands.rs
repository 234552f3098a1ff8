use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use idslab_core::harness::{
    self, write_accuracy_csv, write_candidates_csv, write_selected_csv, write_usage_csv, UpdateCounts,
};
use idslab_core::numerics::{mean, variance};
use idslab_core::stream::{write_csv, write_pkem, Splits, SyntheticSpec};
use idslab_core::{AcquisitionMethod, Error, RunResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Writes a synthetic source. A path with a `.pkem` or `.csv` extension gets
/// a single file holding pool, validation and test in that order; any other
/// path is treated as a directory and gets `pool.pkem`, `validation.pkem`
/// and `test.pkem`.
pub fn generate(spec: &SyntheticSpec, out: &Path) -> Result<Vec<PathBuf>> {
    let splits = spec.build()?;
    let ext = out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("pkem") | Some("csv") => {
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let all = splits.concat();
            let w = BufWriter::new(File::create(out).with_context(|| format!("creating {}", out.display()))?);
            if ext.as_deref() == Some("csv") {
                write_csv(&all, w)?;
            } else {
                write_pkem(&all, w)?;
            }
            Ok(vec![out.to_path_buf()])
        }
        _ => {
            fs::create_dir_all(out)?;
            let mut written = Vec::new();
            for (name, ds) in [("pool", &splits.pool), ("validation", &splits.validation), ("test", &splits.test)] {
                let path = out.join(format!("{name}.pkem"));
                write_pkem(ds, BufWriter::new(File::create(&path)?))?;
                written.push(path);
            }
            Ok(written)
        }
    }
}

/// `result.json` of a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: AcquisitionMethod,
    pub budget: usize,
    pub seed: u64,
    pub complete: bool,
    pub final_test_accuracy: f64,
    pub delta: usize,
    pub updates: UpdateCounts,
    pub cache_refreshes: usize,
    pub candidates_seen: usize,
    pub candidates_accepted: usize,
    pub class_counts: Vec<usize>,
    pub initial_ids: Vec<u64>,
    pub selected_ids: Vec<u64>,
}

impl RunSummary {
    pub fn new(result: &RunResult) -> Self {
        RunSummary {
            method: result.config.method,
            budget: result.config.budget,
            seed: result.config.seed,
            complete: result.complete,
            final_test_accuracy: result.final_test_accuracy,
            delta: result.config.delta(),
            updates: result.updates,
            cache_refreshes: result.cache_refreshes,
            candidates_seen: result.candidates.len(),
            candidates_accepted: result.candidates.iter().filter(|c| c.accepted).count(),
            class_counts: result.class_counts.as_slice().to_vec(),
            initial_ids: result.initial_ids.clone(),
            selected_ids: result.selected_ids(),
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Writes every deterministic output of a run into `dir`.
pub fn write_run_dir(dir: &Path, cfg: &ExperimentConfig, result: &RunResult) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("result.json"), &RunSummary::new(result))?;
    write_candidates_csv(result, create(&dir.join("candidates.csv"))?)?;
    write_accuracy_csv(result, create(&dir.join("accuracy.csv"))?)?;
    write_selected_csv(result, create(&dir.join("selected.csv"))?)?;
    write_usage_csv(result, create(&dir.join("usage.csv"))?)?;
    if let Some(m) = &result.initial_model {
        m.write_checkpoint(create(&dir.join("model_init.pkwt"))?)?;
    }
    result.final_model.write_checkpoint(create(&dir.join("model_final.pkwt"))?)?;
    Ok(())
}

#[derive(Serialize)]
struct Meta {
    version: &'static str,
    started_unix: u64,
    elapsed_secs: f64,
}

/// Timestamps live apart from the other outputs so those stay byte-stable.
fn write_meta(dir: &Path, started: SystemTime, timer: Instant) -> Result<()> {
    let meta = Meta {
        version: env!("CARGO_PKG_VERSION"),
        started_unix: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        elapsed_secs: timer.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("meta.json"), &meta)
}

/// Runs `cfg.ids` on an already built source and writes the run directory.
/// Partial outputs are still written when the run ends early, and the error
/// is returned afterwards.
pub fn run_on(cfg: &ExperimentConfig, splits: &Splits, out: &Path) -> Result<RunSummary> {
    let (started, timer) = (SystemTime::now(), Instant::now());
    let outcome = harness::run(cfg.ids.clone(), splits);
    let (result, failure) = match outcome {
        Ok(r) => (r, None),
        Err(Error::Exhausted(partial)) => (*partial, Some("data source exhausted before the budget was met")),
        Err(Error::Stalled(partial)) => (*partial, Some("selection stalled before the budget was met")),
        Err(e) => return Err(e.into()),
    };
    write_run_dir(out, cfg, &result)?;
    write_meta(out, started, timer)?;
    let summary = RunSummary::new(&result);
    if let Some(msg) = failure {
        bail!("{msg}: {} of {} selected; partial logs in {}", result.selected.len(), cfg.ids.budget, out.display());
    }
    log::info!(
        "{} k={} seed={}: test accuracy {:.4}",
        summary.method,
        summary.budget,
        summary.seed,
        summary.final_test_accuracy
    );
    Ok(summary)
}

pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
    let splits = cfg.source.build()?;
    run_on(cfg, &splits, out)
}

/// One cell of a sweep grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRun {
    pub method: AcquisitionMethod,
    pub budget: usize,
    pub seed: u64,
    pub dir: String,
    pub complete: bool,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

/// Mean and population standard deviation of completed runs per
/// (method, budget).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub method: AcquisitionMethod,
    pub budget: usize,
    pub runs: usize,
    pub completed: usize,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
}

pub fn run_dir_name(method: AcquisitionMethod, budget: usize, seed: u64) -> String {
    format!("{}_k{budget}_s{seed}", method.name())
}

/// Runs methods × budgets × seeds, `jobs` at a time. Writes one directory per
/// run plus `runs.csv` and `summary.csv`. Fails after writing everything if
/// any run failed.
pub fn sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<SweepCell>> {
    fs::create_dir_all(out)?;
    write_json(&out.join("config.json"), cfg)?;

    let seeds = cfg.seeds();
    let mut grid = Vec::new();
    for &seed in &seeds {
        for method in cfg.methods() {
            for budget in cfg.budgets() {
                grid.push((method, budget, seed));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    let runs: Vec<SweepRun> = pool.install(|| -> Result<Vec<SweepRun>> {
        let sources: Vec<(u64, Splits)> = seeds
            .par_iter()
            .map(|&seed| {
                let mut c = cfg.clone();
                c.set_seed(seed);
                Ok((seed, c.source.build()?))
            })
            .collect::<Result<_>>()?;
        let sources: BTreeMap<u64, Splits> = sources.into_iter().collect();
        Ok(grid
            .par_iter()
            .map(|&(method, budget, seed)| {
                let mut c = cfg.clone();
                c.set_seed(seed);
                c.ids.method = method;
                c.ids.budget = budget;
                c.sweep = Default::default();
                let dir = run_dir_name(method, budget, seed);
                match run_on(&c, &sources[&seed], &out.join(&dir)) {
                    Ok(s) => SweepRun {
                        method,
                        budget,
                        seed,
                        dir,
                        complete: true,
                        accuracy: Some(s.final_test_accuracy),
                        error: None,
                    },
                    Err(e) => {
                        log::error!("{dir}: {e:#}");
                        SweepRun {
                            method,
                            budget,
                            seed,
                            dir,
                            complete: false,
                            accuracy: None,
                            error: Some(format!("{e:#}")),
                        }
                    }
                }
            })
            .collect())
    })?;

    let mut w = csv_writer(&out.join("runs.csv"))?;
    w.write_record(["method", "budget", "seed", "dir", "complete", "accuracy", "error"])?;
    for r in &runs {
        w.write_record([
            r.method.name().to_string(),
            r.budget.to_string(),
            r.seed.to_string(),
            r.dir.clone(),
            u8::from(r.complete).to_string(),
            r.accuracy.map_or(String::new(), |a| a.to_string()),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;

    let cells = summarize(&runs);
    let mut w = csv_writer(&out.join("summary.csv"))?;
    w.write_record(["method", "budget", "runs", "completed", "mean_accuracy", "std_accuracy"])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for c in &cells {
        w.write_record([
            c.method.name().to_string(),
            c.budget.to_string(),
            c.runs.to_string(),
            c.completed.to_string(),
            opt(c.mean_accuracy),
            opt(c.std_accuracy),
        ])?;
    }
    w.flush()?;

    let failed = runs.iter().filter(|r| !r.complete).count();
    if failed > 0 {
        bail!("{failed} of {} runs failed; see {}", runs.len(), out.join("runs.csv").display());
    }
    Ok(cells)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn summarize(runs: &[SweepRun]) -> Vec<SweepCell> {
    let mut groups: Vec<((AcquisitionMethod, usize), Vec<&SweepRun>)> = Vec::new();
    for r in runs {
        match groups.iter_mut().find(|(k, _)| *k == (r.method, r.budget)) {
            Some((_, v)) => v.push(r),
            None => groups.push(((r.method, r.budget), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|((method, budget), rs)| {
            let accs: Vec<f64> = rs.iter().filter_map(|r| r.accuracy).collect();
            SweepCell {
                method,
                budget,
                runs: rs.len(),
                completed: accs.len(),
                mean_accuracy: mean(&accs),
                std_accuracy: variance(&accs).map(f64::sqrt),
            }
        })
        .collect()
}
