//! Command-line driver: manifest I/O plus the fit, eval, synth and
//! multiroom commands.

pub mod commands;
pub mod manifest;

use std::path::PathBuf;

use roomlayout::{GridError, ManifestError, SceneError};
use thiserror::Error;

pub use commands::{run, Cli, Outcome};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid arguments: {0}")]
    Usage(String),
}

impl CliError {
    /// Every error maps to exit status 1; no-progress is an outcome, not an error.
    pub fn exit_code(&self) -> i32 {
        1
    }
}
