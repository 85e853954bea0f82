//! Command-line surface: run configuration, CSV ingestion, synthetic-data
//! generation, and the `simulate`, `jacobian`, `gradient`, `calibrate`, and
//! `verify` subcommands.

pub mod commands;
pub mod config;
pub mod csvio;
pub mod synth;
pub mod verify;

pub use commands::{cmd_calibrate, cmd_gradient, cmd_jacobian, cmd_simulate, AppError};
pub use config::RunConfig;
pub use verify::cmd_verify;
