use std::collections::{HashMap, HashSet};
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use idslab_core::analysis::{
    acceptance_rate_series, noise_audit, overlap_matrix, rank_correlation, score_trace, usage_stats, RunSets,
};
use idslab_core::harness::{read_candidates_csv, read_selected_csv, read_usage_csv, CandidateRecord, SelectedRecord};
use idslab_core::scoring::ClassPrototypes;
use idslab_core::stream::Example;
use idslab_core::LinearSoftmax;

use crate::commands::RunSummary;
use crate::config::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Analysis {
    Overlap,
    Traces,
    Rankcorr,
    Usage,
    Noise,
}

impl FromStr for Analysis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "overlap" => Analysis::Overlap,
            "traces" => Analysis::Traces,
            "rankcorr" => Analysis::Rankcorr,
            "usage" => Analysis::Usage,
            "noise" => Analysis::Noise,
            _ => return Err(format!("unknown analysis {s:?}; expected overlap|traces|rankcorr|usage|noise")),
        })
    }
}

#[derive(Clone, Debug)]
pub struct AnalyzeOptions {
    /// Rolling window for traces.
    pub window: usize,
    /// Pool examples scored by the rank-correlation experiment.
    pub sample: usize,
}

impl Default for AnalyzeOptions {
    fn default() -> Self {
        AnalyzeOptions { window: 500, sample: 1000 }
    }
}

/// A run directory read back from disk.
pub struct StoredRun {
    pub label: String,
    pub dir: PathBuf,
    pub summary: RunSummary,
}

impl StoredRun {
    fn open(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("result.json"))?;
        let summary = serde_json::from_str(&text).with_context(|| format!("parsing {}/result.json", dir.display()))?;
        let label = dir.file_name().map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned());
        Ok(StoredRun { label, dir: dir.to_path_buf(), summary })
    }

    fn candidates(&self) -> Result<Vec<CandidateRecord>> {
        Ok(read_candidates_csv(File::open(self.dir.join("candidates.csv"))?)?)
    }

    fn selected(&self) -> Result<Vec<SelectedRecord>> {
        Ok(read_selected_csv(File::open(self.dir.join("selected.csv"))?)?)
    }

    fn config(&self) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(self.dir.join("config.json"))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `dir` itself if it is a run directory, otherwise its run subdirectories
/// in name order.
pub fn discover_runs(dir: &Path) -> Result<Vec<StoredRun>> {
    if dir.join("result.json").is_file() {
        return Ok(vec![StoredRun::open(dir)?]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("result.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        bail!("no run directories under {}", dir.display());
    }
    dirs.iter().map(|d| StoredRun::open(d)).collect()
}

fn matrix_csv(path: &Path, labels: &[String], rows: &[Vec<Option<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["run".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header)?;
    for (label, row) in labels.iter().zip(rows) {
        let mut rec = vec![label.clone()];
        rec.extend(row.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn series_csv(path: &Path, column: &str, values: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", column])?;
    for (i, v) in values.iter().enumerate() {
        w.write_record([i.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn some(rows: Vec<Vec<f64>>) -> Vec<Vec<Option<f64>>> {
    rows.into_iter().map(|r| r.into_iter().map(Some).collect()).collect()
}

/// Runs one analysis over the runs under `results` and writes CSVs into
/// `out`. Returns the files written.
pub fn analyze(results: &Path, which: Analysis, out: &Path, opts: &AnalyzeOptions) -> Result<Vec<PathBuf>> {
    let runs = discover_runs(results)?;
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    match which {
        Analysis::Overlap => {
            let sets = runs
                .iter()
                .map(|r| Ok(RunSets::new(&r.label, &r.selected()?, &r.candidates()?, r.summary.final_test_accuracy)))
                .collect::<Result<Vec<_>>>()?;
            let m = overlap_matrix(&sets);
            for (name, rows) in [("overlap_acquired.csv", &m.acquired), ("overlap_seen.csv", &m.seen)] {
                let path = out.join(name);
                matrix_csv(&path, &m.labels, &some(rows.clone()))?;
                written.push(path);
            }
            let path = out.join("overlap_accuracy.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["run", "accuracy"])?;
            for (l, a) in m.labels.iter().zip(&m.accuracies) {
                w.write_record([l.clone(), a.to_string()])?;
            }
            w.flush()?;
            written.push(path);
        }
        Analysis::Traces => {
            for r in &runs {
                let cands = r.candidates()?;
                if cands.is_empty() {
                    log::warn!("{}: empty candidate log", r.label);
                }
                let path = out.join(format!("trace_{}.csv", r.label));
                series_csv(&path, "score", &score_trace(&cands, opts.window)?)?;
                written.push(path);
                let path = out.join(format!("acceptance_{}.csv", r.label));
                series_csv(&path, "rate", &acceptance_rate_series(&cands, opts.window)?)?;
                written.push(path);
            }
        }
        Analysis::Rankcorr => {
            for r in &runs {
                let cfg = r.config()?;
                let splits = cfg.source.build()?;
                let model = LinearSoftmax::read_checkpoint(File::open(r.dir.join("model_init.pkwt"))?)?;
                let initial: HashSet<u64> = r.summary.initial_ids.iter().copied().collect();
                let sample: Vec<&Example> =
                    splits.pool.examples.iter().filter(|e| !initial.contains(&e.id)).take(opts.sample).collect();
                let protos = ClassPrototypes::compute(&splits.validation);
                let rc = rank_correlation(&model, &sample, &protos)?;
                let labels: Vec<String> = rc.methods.iter().map(|m| m.name().to_string()).collect();
                let path = out.join(format!("rankcorr_{}.csv", r.label));
                matrix_csv(&path, &labels, &rc.matrix)?;
                written.push(path);
            }
        }
        Analysis::Usage => {
            let summary_path = out.join("usage_summary.csv");
            let mut summary = csv::Writer::from_path(&summary_path)?;
            summary.write_record(["run", "examples", "mean", "variance", "std"])?;
            for r in &runs {
                let usage = read_usage_csv(File::open(r.dir.join("usage.csv"))?)?;
                let s = usage_stats(&usage)?;
                summary.write_record([
                    r.label.clone(),
                    usage.len().to_string(),
                    s.mean.to_string(),
                    s.variance.to_string(),
                    s.std.to_string(),
                ])?;
                let path = out.join(format!("usage_{}.csv", r.label));
                let mut w = csv::Writer::from_path(&path)?;
                w.write_record(["count", "examples"])?;
                for (count, n) in &s.histogram {
                    w.write_record([count.to_string(), n.to_string()])?;
                }
                w.flush()?;
                written.push(path);
            }
            summary.flush()?;
            written.push(summary_path);
        }
        Analysis::Noise => {
            let path = out.join("noise.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["run", "subset", "total", "known", "noisy", "fraction"])?;
            for r in &runs {
                let splits = r.config()?.source.build()?;
                let lookup: HashMap<u64, &Example> = splits.pool.examples.iter().map(|e| (e.id, e)).collect();
                let selected = r.selected()?;
                let acquired: Vec<u64> = selected.iter().filter(|s| s.step.is_some()).map(|s| s.id).collect();
                let all: Vec<u64> = selected.iter().map(|s| s.id).collect();
                for (subset, ids) in [("selected", &all), ("acquired", &acquired)] {
                    let a = noise_audit(ids, &lookup)?;
                    w.write_record([
                        r.label.clone(),
                        subset.to_string(),
                        a.total.to_string(),
                        a.known.to_string(),
                        a.noisy.to_string(),
                        a.fraction().map_or(String::new(), |f| f.to_string()),
                    ])?;
                }
            }
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}
