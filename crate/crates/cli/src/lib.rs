//! Command-line front end: configs, experiment drivers and output writers.

pub mod commands;
pub mod config;
pub mod error;
pub mod matrix;
pub mod sweep;

pub use commands::{dispatch, Cli};
pub use error::CliError;
