use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("truncation-unsafe parameters: {reason} (need per-mode dimension >= {required_dim})")]
    Truncation { reason: String, required_dim: usize },

    #[error("operator is not Hermitian (max deviation {deviation:.3e})")]
    NonHermitian { deviation: f64 },

    #[error("state integrity violated: {0}")]
    Integrity(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("quadrature did not converge: estimate {estimate:.6e}, error bound {error_bound:.3e}")]
    QuadratureNonConvergence { estimate: f64, error_bound: f64 },

    #[error("finite-difference step check failed: {0}")]
    StepSize(String),

    #[error("optimization failed: {0}")]
    Optimization(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
