//! Experiment harness: corpus generation, staged training, evaluation,
//! ablations and reports.

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluate;
pub mod priors;
pub mod report;
pub mod stages;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
