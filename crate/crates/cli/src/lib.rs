//! Problem files, command dispatch and deterministic artifacts for the
//! `ludyn` command-line tool.

pub mod commands;
pub mod error;
pub mod json;
pub mod plot;
pub mod problem;

pub use commands::{run, Command, Summary};
pub use error::{CliError, CliResult};
pub use problem::Problem;

/// Environment variable naming the output root (default `out`).
pub const OUT_ENV: &str = "LUDYN_OUT";
