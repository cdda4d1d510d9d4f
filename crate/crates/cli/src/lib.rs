//! Batch front end: condensation, evaluation, moment diagnostics, ablation
//! sweeps and image export, all driven by a flat TOML [`RunConfig`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod datasets;
pub mod error;

pub use checkpoint::Checkpoint;
pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
