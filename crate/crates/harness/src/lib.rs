//! Experiment harness: configuration parsing, multi-seed execution with
//! equal sample budgets, CSV trace emission, and static SVG plots.

pub mod config;
pub mod csvio;
pub mod experiment;
pub mod svg;
pub mod verify;

use thiserror::Error;

/// Harness-level failures, classified for the CLI exit codes.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("run divergence: {0}")]
    Divergence(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Divergence(_) => 2,
            HarnessError::Io(_) => 3,
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<sqn_core::Error> for HarnessError {
    fn from(e: sqn_core::Error) -> Self {
        match e {
            sqn_core::Error::Io(io) => HarnessError::Io(io.to_string()),
            sqn_core::Error::NonFinite { .. } => HarnessError::Divergence(e.to_string()),
            sqn_core::Error::Parse { .. } => HarnessError::Config(e.to_string()),
            other => HarnessError::Config(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
