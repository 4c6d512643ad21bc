//! File formats, run configuration and the `tunet` command line on top of
//! [`tunet_core`].
//!
//! - [`formats`]: image tensors, dataset directories, checkpoints, CSV reports.
//! - [`config`]: the validated `key = value` run configuration.
//! - [`commands`]: synth, stats, train, lr-find, predict and eval as functions.
//! - [`cli`]: argument parsing and exit codes.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod formats;

pub use config::RunConfig;
pub use error::{CliError, Result};
