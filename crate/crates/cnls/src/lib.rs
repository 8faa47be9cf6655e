//! Configuration, experiment commands and output formats for the `cnls`
//! binary.

pub mod commands;
pub mod config;
pub mod output;
pub mod verify;

pub use commands::{Context, HarnessError};
pub use config::ExperimentConfig;
