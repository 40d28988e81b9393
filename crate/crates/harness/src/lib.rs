//! Experiment driver: identification, safety-filter synthesis, Monte Carlo
//! verification and report generation from a TOML configuration.

pub mod config;
pub mod error;
pub mod experiment;
pub mod io;
pub mod mse;
pub mod report;
pub mod safety;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
