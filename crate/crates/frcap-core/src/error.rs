//! Error type shared across the crate.

/// Errors reported by construction, numeric, and data operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Incompatible dimensions between operands or against a declared shape.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A NaN or infinity appeared where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A parameter is outside its documented domain (e.g. a norm exponent < 1).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// The requested combination of options is not supported.
    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    /// A matrix factorization failed (e.g. Cholesky on a non-SPD matrix).
    #[error("decomposition failed: {0}")]
    Decomposition(String),

    /// An iterative solver did not reach its tolerance.
    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    /// Training aborted because the loss became non-finite.
    #[error("training diverged: {0}")]
    Diverged(String),

    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
