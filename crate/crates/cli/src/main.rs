use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use idslab::config::RefreshPeriod;
use idslab::{Analysis, AnalyzeOptions, ExperimentConfig, Overrides, SourceConfig};
use idslab_core::harness::ReplaySampling;
use idslab_core::stream::SyntheticSpec;
use idslab_core::AcquisitionMethod;

#[derive(Parser)]
#[command(name = "idslab", version, about = "Incremental data selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic source as embedding files.
    Generate {
        /// A `SyntheticSpec` JSON, or an experiment config with a synthetic source.
        #[arg(long)]
        config: PathBuf,
        /// `.pkem`/`.csv` file, or a directory for pool/validation/test files.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one experiment.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Run methods × budgets × seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        overrides: OverrideArgs,
    },
    /// Emit CSV reports from finished runs.
    Analyze {
        /// overlap | traces | rankcorr | usage | noise
        which: Analysis,
        /// A run directory or a sweep directory.
        #[arg(long)]
        results: PathBuf,
        /// Defaults to `<results>/analysis`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        window: usize,
        #[arg(long, default_value_t = 1000)]
        sample: usize,
    },
}

#[derive(Args)]
struct OverrideArgs {
    /// Seeds both the data source and the run.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<AcquisitionMethod>,
    #[arg(long)]
    budget: Option<usize>,
    /// Selection rate in percent.
    #[arg(long)]
    rate: Option<f64>,
    /// Cache refresh period in updates, or `inf`.
    #[arg(long)]
    tau: Option<RefreshPeriod>,
    /// uniform | count_inverse
    #[arg(long)]
    replay: Option<ReplaySampling>,
    #[arg(long, value_name = "BOOL", action = clap::ArgAction::Set)]
    normalize_class_count: Option<bool>,
    #[arg(long, value_name = "BOOL", action = clap::ArgAction::Set)]
    deferred_merge: Option<bool>,
}

impl OverrideArgs {
    fn load(&self, config: &Path) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(config)?;
        Overrides {
            seed: self.seed,
            method: self.method,
            budget: self.budget,
            rate: self.rate,
            tau: self.tau,
            replay: self.replay,
            normalize_class_count: self.normalize_class_count,
            deferred_merge: self.deferred_merge,
        }
        .apply(&mut cfg)?;
        Ok(cfg)
    }
}

fn load_spec(path: &PathBuf) -> Result<SyntheticSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(spec) = serde_json::from_str::<SyntheticSpec>(&text) {
        return Ok(spec);
    }
    match ExperimentConfig::load(path)?.source {
        SourceConfig::Synthetic(spec) => Ok(spec),
        _ => anyhow::bail!("{} has no synthetic source", path.display()),
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IDSLAB_LOG", "info")).init();
    match Cli::parse().command {
        Command::Generate { config, out, seed } => {
            let mut spec = load_spec(&config)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            for path in idslab::generate(&spec, &out)? {
                println!("{}", path.display());
            }
        }
        Command::Run { config, out, overrides } => {
            let cfg = overrides.load(&config)?;
            let s = idslab::run(&cfg, &out)?;
            println!("{} k={} seed={} test_accuracy={:.4}", s.method, s.budget, s.seed, s.final_test_accuracy);
        }
        Command::Sweep { config, out, jobs, overrides } => {
            let cfg = overrides.load(&config)?;
            for c in idslab::sweep(&cfg, &out, jobs)? {
                let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!(
                    "{} k={} n={} mean={} std={}",
                    c.method,
                    c.budget,
                    c.completed,
                    fmt(c.mean_accuracy),
                    fmt(c.std_accuracy)
                );
            }
        }
        Command::Analyze { which, results, out, window, sample } => {
            let out = out.unwrap_or_else(|| results.join("analysis"));
            for path in idslab::analyze(&results, which, &out, &AnalyzeOptions { window, sample })? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}
