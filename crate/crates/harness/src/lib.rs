//! Experiment harness: TOML configs, sweeps over hyperparameter grids,
//! per-run persistence and the summary report.

pub mod cli;
pub mod config;
pub mod error;
pub mod report;
pub mod run;
pub mod sweep;

pub use config::{expand_grid, ExperimentConfig, Optimizer};
pub use error::{HarnessError, Result};
pub use run::{run_single, RunRecord, RunStatus};
pub use sweep::run_sweep;
