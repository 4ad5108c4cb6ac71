//! Command-line driver: config files, dataset loading and the
//! `pretrain`, `probe`, `graph-eval`, `ablate` and `gradcheck` commands.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;

pub use config::Config;
pub use error::{CliError, Result};
