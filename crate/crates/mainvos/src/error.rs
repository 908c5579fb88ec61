//! Error type shared across the crate.
//!
//! Three broad classes matter to callers: I/O failures (bad paths, broken
//! files), validation failures (caller handed us inconsistent shapes, values
//! out of range, malformed configs), and runtime failures inside a pipeline
//! (a training step hit a non-finite loss, an inference step was asked for a
//! frame that does not exist). The CLI maps validation problems to exit code
//! 1 and everything else to exit code 2.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("pipeline failure at step {step}: {detail}")]
    Runtime { step: String, detail: String },
}

impl Error {
    /// I/O error carrying the offending path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Malformed on-disk data (wrong magic, bad dimensions, ...).
    pub fn format(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Format { path: path.into(), detail: detail.into() }
    }

    /// Caller-supplied values are inconsistent (shapes, ranges, configs).
    pub fn validation(detail: impl Into<String>) -> Self {
        Error::Validation(detail.into())
    }

    /// A pipeline step failed mid-run (training divergence, missing frame).
    pub fn runtime(step: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Runtime { step: step.into(), detail: detail.into() }
    }

    /// Exit code for the CLI: validation errors are caller mistakes (1),
    /// everything else is an execution failure (2).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_) => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Shorthand for shape checks that should read like one-line preconditions.
pub(crate) fn ensure(cond: bool, detail: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Validation(detail()))
    }
}
