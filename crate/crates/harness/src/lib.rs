//! Experiment harness around the `cowboy` defense library: configuration,
//! trained-stack orchestration, report tables, and the CLI plumbing.

pub mod config;
pub mod error;
pub mod experiments;
pub mod report;

pub use config::{DataSource, ExperimentConfig};
pub use error::{HarnessError, Result};
