//! Command-line layer: layered configuration, run directories and the
//! `gen`, `train`, `eval`, `decode`, `ablate` and `verify` commands.

pub mod commands;
pub mod config;
pub mod error;
pub mod verify;

pub use error::{CliError, CliResult};
