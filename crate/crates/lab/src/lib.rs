//! Experiment harness for the rwre simulation laboratory: configuration,
//! Monte Carlo experiments, artifact output and the command dispatcher.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
pub mod run;

pub use config::ExperimentConfig;
pub use error::{LabError, LabResult};
