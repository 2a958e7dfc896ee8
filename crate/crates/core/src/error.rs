use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid label {value} at row {row} (expected -1, 0, 1 or +1)")]
    InvalidLabel { row: usize, value: String },

    #[error("dimension mismatch: {context} (expected {expected}, found {found})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{0}")]
    Split(String),

    #[error("matrix is not symmetric (entry ({row}, {col}) differs by {diff:e})")]
    NotSymmetric { row: usize, col: usize, diff: f64 },

    #[error("eigensolver failed to converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("rho = {rho} does not exceed -mu_min = {neg_mu_min}")]
    RhoTooSmall { rho: f64, neg_mu_min: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("kernel matrix is indefinite (min eigenvalue {min_eigenvalue:e}); use an indefinite-aware method")]
    IndefiniteKernel { min_eigenvalue: f64 },

    #[error("non-finite gradient at inner iteration {iteration}; the step size is likely too large")]
    NonFiniteGradient { iteration: usize },

    #[error("malformed model file at line {line}: {message}")]
    ModelFormat { line: usize, message: String },

    #[error("incompatible model version {found:?} (expected {expected:?})")]
    ModelVersion { expected: String, found: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
