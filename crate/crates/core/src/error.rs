use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("covariance matrix is not positive definite (min eigenvalue {min_eigenvalue:e}, max {max_eigenvalue:e})")]
    SingularCovariance {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("invalid label {label} at row {row}; labels must be 1 or 2")]
    InvalidLabel { row: usize, label: u8 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("non-finite objective: {0}")]
    NonFinite(String),

    #[error("line search failed after {restarts} restarts (max gradient component {grad_norm:e})")]
    LineSearch { restarts: usize, grad_norm: f64 },

    #[error("quadrature did not reach tolerance: estimated error {error_estimate:e} > {tolerance:e}")]
    Quadrature {
        error_estimate: f64,
        tolerance: f64,
    },

    #[error("diagnostics: {group} group {reason}")]
    Diagnostics { group: &'static str, reason: String },

    #[error("all {reps} replications failed")]
    AllReplicationsFailed { reps: usize },
}
