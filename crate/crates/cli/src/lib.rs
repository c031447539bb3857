//! Command-line harness around `cctsens`: single runs, parameter sweeps with
//! the finite-difference cross-check, and phase-portrait export.

pub mod config;
pub mod error;
pub mod output;
pub mod portrait;
pub mod single;
pub mod sweep;

pub use config::RunConfig;
pub use error::{exit, CliError, CliResult};
