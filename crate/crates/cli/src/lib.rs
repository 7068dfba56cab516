//! Config-driven harness for dataset generation, training, evaluation and
//! difficulty analysis.

pub mod commands;
pub mod config;
pub mod overrides;

pub use config::ExperimentConfig;
