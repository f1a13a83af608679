//! Driver for the phase-field MHD solver: configuration, commands and file
//! output.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_check, cmd_converge, cmd_run, CheckReport, CliError, RunSummary};
pub use config::{parse_real, ConfigError, RunConfig};
