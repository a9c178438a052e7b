//! Library side of the `st3d` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use config::{ExperimentConfig, SpatialMode};
pub use error::{CliError, CliResult, ErrorKind};
