//! File formats, checkpoints, rendering and the `motion2d` command line,
//! built on `motion2d-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod features;
pub mod io;
pub mod manifest;
pub mod render;

pub use error::{CliError, CliResult};
