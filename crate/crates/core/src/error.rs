use thiserror::Error;

/// Errors shared by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("sample index {index} out of bounds for dataset of size {size}")]
    IndexOutOfBounds { index: usize, size: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("label {0} is outside {{0, 1}}; the logistic loss requires binary labels")]
    LabelDomain(f64),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("curvature pair rejected: {0}")]
    PairRejected(String),

    #[error("dense form requested for dimension {0}, above the test-scale guard of {1}")]
    DenseGuard(usize, usize),

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: &'static str, iteration: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T> = std::result::Result<T, Error>;
