//! Config-driven experiment runner for incremental data selection: dataset
//! generation, single runs, parameter sweeps and post-hoc analyses.

pub mod analyze;
pub mod commands;
pub mod config;

pub use analyze::{analyze, Analysis, AnalyzeOptions};
pub use commands::{generate, run, sweep, RunSummary};
pub use config::{ExperimentConfig, Overrides, SourceConfig};
