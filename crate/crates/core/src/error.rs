use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A factorization or solve met a matrix whose reciprocal condition
    /// estimate fell below the rank guard.
    #[error("singular system in {context} (reciprocal condition {rcond:.3e})")]
    Singular { context: &'static str, rcond: f64 },

    #[error("matrix is not Hermitian positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("code is not a permutation of 0..{0}")]
    InvalidPermutation(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid angle: |f/d| = {0} exceeds 1")]
    InvalidAngle(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
