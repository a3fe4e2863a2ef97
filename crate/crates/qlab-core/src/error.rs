//! Error type shared by all quantization and verification routines.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// The dampened Hessian could not be factored. Raising the dampening
    /// usually fixes this; the conventional default is 0.01 * ||X||_F^2 / N.
    #[error(
        "X^T X + lambda*I is not positive definite (lambda = {lambda}); \
         retry with a larger dampening, e.g. the default {suggested}"
    )]
    NotPositiveDefinite { lambda: f64, suggested: f64 },

    #[error("dampening must be positive here, got {0}")]
    InvalidLambda(f64),

    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("result carries no per-step trace")]
    TraceMissing,

    #[error("enumeration needs {needed} grid vectors, budget allows {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },

    #[error("{0} is not a power of two")]
    NotPowerOfTwo(usize),

    #[error("detected numerical rank {detected}, expected {expected}")]
    RankMismatch { detected: usize, expected: usize },

    #[error("non-finite entry at row {row}, column {col}")]
    NonFiniteEntry { row: usize, col: usize },
}
