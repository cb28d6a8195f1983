//! Configuration, reports and the command line.

pub mod cli;
pub mod config;
pub mod report;

pub use config::ExperimentConfig;
pub use report::{ComparisonReport, ComparisonRow};
