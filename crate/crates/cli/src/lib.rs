//! Command-line surface over the grounding engine: declarative run
//! configuration plus the `ground`, `eval`, and `sweep` commands.

pub mod commands;
pub mod config;

pub use commands::{cmd_eval, cmd_ground, cmd_sweep, CliError};
pub use config::{ConfigEcho, RunConfig, FIXTURE_ROOT_ENV};
