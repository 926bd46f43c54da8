//! Dense real-matrix kernels shared by every other module: regularized least
//! squares, discrete Lyapunov solves, Moore-Penrose pseudo-inverse, and
//! spectral radius.
//!
//! All operations are pure functions of their inputs; `Matrix` values are
//! immutable in practice and safe to share across threads.

mod matrix;
mod solvers;

pub use matrix::Matrix;
pub use solvers::{
    pseudo_inverse, solve_discrete_lyapunov, solve_least_squares, spectral_radius, LeastSquares,
    EPS_STAB,
};

use std::fmt;

/// Errors from the dense-matrix kernels.
#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    /// Operand shapes do not chain.
    DimensionMismatch { context: String },
    /// A NaN or infinity reached a public operation.
    NonFinite { context: String },
    /// Discrete Lyapunov solve requested for a lifted system with spectral
    /// radius at or beyond the stability margin.
    UnstableDynamics { spectral_radius: f64 },
    /// The QR eigenvalue iteration did not converge within its cap.
    EigenNonConvergence { iterate_norm: f64 },
    /// Invalid scalar argument (negative ridge, non-positive tolerance, ...).
    InvalidArgument { context: String },
    /// File read/write failure.
    Io(String),
    /// Malformed matrix file.
    Parse(String),
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NumericsError::DimensionMismatch { context } => {
                write!(f, "dimension mismatch: {context}")
            }
            NumericsError::NonFinite { context } => {
                write!(f, "non-finite value: {context}")
            }
            NumericsError::UnstableDynamics { spectral_radius } => write!(
                f,
                "unstable lifted dynamics (spectral radius {spectral_radius}); \
                 use finite-horizon Gramian"
            ),
            NumericsError::EigenNonConvergence { iterate_norm } => write!(
                f,
                "eigenvalue iteration did not converge (iterate norm {iterate_norm})"
            ),
            NumericsError::InvalidArgument { context } => {
                write!(f, "invalid argument: {context}")
            }
            NumericsError::Io(msg) => write!(f, "i/o error: {msg}"),
            NumericsError::Parse(msg) => write!(f, "parse error: {msg}"),
        }
    }
}

impl std::error::Error for NumericsError {}

impl From<std::io::Error> for NumericsError {
    fn from(e: std::io::Error) -> Self {
        NumericsError::Io(e.to_string())
    }
}
