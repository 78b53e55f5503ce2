//! Deterministic numerical substrate: dense matrices, seeded random streams,
//! Gaussian sampling, least squares and numerical oracles.

mod calculus;
mod gaussian;
mod matrix;
mod regression;
mod rng;

pub use calculus::{finite_diff_gradient, finite_diff_partials, integrate_adaptive};
pub use gaussian::{
    cholesky, cholesky_with_jitter, sample_gaussian, CholeskyFactor, MultivariateGaussian,
};
pub use matrix::{dot, Matrix};
pub use regression::{linear_fit, LinearFit};
pub use rng::{RngStream, StreamGenerator};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric at ({row}, {col}): |a_ij - a_ji| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix is indefinite after maximum jitter (pivot {pivot:e})")]
    IndefiniteAfterJitter { pivot: f64 },
    #[error("non-finite value")]
    NonFinite,
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("regression abscissae are degenerate (fewer than two distinct x values)")]
    DegenerateX,
    #[error("finite-difference step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("function evaluation is not finite near coordinate {coord}")]
    NonFiniteEvaluation { coord: usize },
    #[error("adaptive quadrature did not converge (error estimate {error:e})")]
    QuadratureNotConverged { error: f64 },
}
