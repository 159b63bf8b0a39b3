//! Experiment runner for the BART causal estimators: seeded replications,
//! ablation batches and result tables.

pub mod config;
pub mod error;
pub mod runner;

pub use config::{EstimatorKind, ExperimentConfig, Source};
pub use error::{CliError, Result};
pub use runner::{ablate, execute, replication_seed, report, run, Job, Manifest, Outcome};
