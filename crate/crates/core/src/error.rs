//! Error type shared by all modules.

use thiserror::Error;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures reported by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A covariance or shape matrix is not symmetric positive definite.
    #[error("matrix is not symmetric positive definite: {0}")]
    SingularCovariance(String),

    /// Model parameters violate their admissibility constraints.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A coordinate subset is not strictly increasing or out of range.
    #[error("invalid index tuple {indices:?} for dimension {dim}")]
    InvalidIndexTuple { indices: Vec<usize>, dim: usize },

    /// A damping vector lies outside the joint analyticity strip.
    #[error("damping outside the analyticity strip: {0}")]
    StripViolation(String),

    /// No admissible damping vector could be located.
    #[error("analyticity strip is empty: {0}")]
    StripEmpty(String),

    /// The Sobol' direction-number table does not cover the dimension.
    #[error("net dimension {dim} exceeds the direction-number table ({available} dimensions)")]
    DimensionUnsupported { dim: usize, available: usize },

    /// A direction-number table could not be parsed.
    #[error("direction numbers, line {line}: {message}")]
    DirectionNumbers { line: usize, message: String },

    /// The RQMC design is malformed (non power-of-two sizes, too few shifts...).
    #[error("invalid design: {0}")]
    InvalidDesign(String),

    /// The bordered Hessian used in the sandwich covariance is singular.
    #[error("singular Hessian: {0}")]
    SingularHessian(String),

    /// The KKT system of a quadratic-programming step is singular.
    #[error("singular KKT system: {0}")]
    SingularKkt(String),

    /// A Lagrange multiplier is not strictly positive.
    #[error("multiplier must be positive, got {0}")]
    NonPositiveMultiplier(f64),

    /// An iterative scheme diverged.
    #[error("divergence detected: {0}")]
    DivergenceDetected(String),

    /// A numerical evaluation produced a non-finite value.
    #[error("non-finite value: {0}")]
    NonFinite(String),
}
