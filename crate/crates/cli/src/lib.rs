//! Experiment configuration, commands, and output files for `perfcrd`.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, Options, RunResult};
pub use config::ExperimentConfig;
pub use error::CliError;
