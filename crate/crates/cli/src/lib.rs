//! Experiment driver for the `fsrm` binary: configuration, commands and output.

pub mod commands;
pub mod config;
pub mod error;
pub mod fit;
pub mod output;

pub use error::{CliError, CliResult};
