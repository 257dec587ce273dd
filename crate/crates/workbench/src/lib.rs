//! Experiment orchestration: configuration, run directories, the
//! `chda` subcommands and report generation.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;
pub mod rundir;
pub mod svg;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use rundir::RunManifest;
