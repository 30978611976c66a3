//! Experiment harness: configuration, orchestration, checkpoints and
//! artifact emission on top of `aqc-core`.

pub mod checkpoint;
pub mod config;
pub mod emit;
pub mod error;
pub mod experiment;

pub use config::{parse_config, ExperimentConfig, Mode};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, Outcome, RunOptions};
