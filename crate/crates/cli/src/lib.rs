//! Command-line front end: configuration files, subcommands and exit codes.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Cli};
pub use error::{CliError, ExitKind};
