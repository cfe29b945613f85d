//! Configuration-driven front end to the `sbpdiff` solver.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, Result};
