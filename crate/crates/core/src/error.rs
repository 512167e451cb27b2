//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the pipeline. Configuration and shape misuse are
/// distinguished from I/O and from numeric blow-ups so the CLI can map them
/// onto exit codes.
#[derive(Debug, Error)]
pub enum HyldaError {
    #[error("config error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("non-finite loss in {step}: {value}")]
    NonFinite { step: String, value: f64 },

    #[error("{0}")]
    Other(String),
}

impl HyldaError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HyldaError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        HyldaError::Format { path: path.into(), reason: reason.into() }
    }

    /// True when the error should map to a usage/config exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, HyldaError::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, HyldaError>;
