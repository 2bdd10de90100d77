//! File formats, checkpoints and the command-line driver around
//! [`evderain_core`].
//!
//! - [`io`]: CSV and packed-binary event files, prediction files
//! - [`checkpoint`]: parameter and optimizer snapshots
//! - [`config`]: the JSON run configuration
//! - [`commands`]: what each subcommand does
//! - [`cli`]: argument parsing and exit codes

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;

pub use error::{Error, Result};
