//! Experiment orchestration for preference-based posterior sampling:
//! config files, run grids, result CSVs, summaries and bound reports.

pub mod config;
pub mod error;
pub mod experiment;
pub mod grid;

pub use config::{load_config, Algo, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{
    report_bounds, run_experiment, run_experiment_with, write_bounds, Problem, ResultRow,
};
