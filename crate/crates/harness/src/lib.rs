//! Configuration, orchestration and reports for the `polyflow` CLI.

pub mod checks;
pub mod commands;
pub mod config;
pub mod problem;
pub mod report;

pub use config::{CheckId, ExperimentConfig};
pub use problem::Problem;
pub use report::VerificationReport;
