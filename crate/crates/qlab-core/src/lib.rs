//! Desk-scale laboratory for greedy post-training weight quantization.
//!
//! The crate implements the OPTQ family of quantizers (Cholesky and
//! least-squares formulations, deterministic and stochastic rounding),
//! the Qronos drift-correcting variant, closed-form error-bound
//! constants with Monte Carlo tail verifiers, exact brute-force integer
//! least squares at toy sizes, and the worst-case instances on which
//! deterministic quantization error grows with the dimension.

pub mod adversarial;
pub mod alphabet;
pub mod bounds;
pub mod error;
pub mod linops;
pub mod optq;
pub mod oracle;
pub mod qronos;
pub mod sim;

pub use alphabet::{Alphabet, AlphabetKind, Rounded, RoundingMode};
pub use bounds::BoundReport;
pub use error::{Error, Result};
pub use linops::{CalibrationMatrix, CholeskyFactor};
pub use optq::{
    ColumnOrdering, Formulation, Lambda, LayerResult, QuantConfig, QuantResult, QuantTrace,
};
pub use oracle::IlsSolution;
pub use qronos::QronosInput;
