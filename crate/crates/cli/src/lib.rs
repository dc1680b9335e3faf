//! Run configuration, artifact formats and the `qpburst` pipeline commands.
//!
//! The commands form a chain over one run directory:
//! `simulate → process → calibrate → fit → reconstruct`. Each stage reads the
//! artifacts of the earlier ones and nothing else, so any stage can be rerun
//! alone.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/pipeline.md")]
mod guide {}
