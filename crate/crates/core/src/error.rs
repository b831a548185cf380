//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("kernel diagonal entry {index} is {value:.3e}; cannot normalize")]
    DegenerateDiagonal { index: usize, value: f64 },

    #[error("alignment of a zero-norm matrix is undefined")]
    ZeroAlignment,

    #[error("task {0} contains a single class")]
    SingleClass(usize),

    #[error("invalid hyperparameters: {0}")]
    InvalidHyperParams(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("size cap exceeded: {got} rows > cap {cap}")]
    CapExceeded { got: usize, cap: usize },

    #[error("task {task} is too small: {detail}")]
    TaskTooSmall { task: usize, detail: String },

    #[error("negative radicand {value:.6e} in complexity bound")]
    NegativeRadicand { value: f64 },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Invalid(String),
}
