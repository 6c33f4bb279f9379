//! Error types shared across the solver.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("matrix is not Hermitian: deviation {deviation:e} exceeds tolerance {tolerance:e}")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("eigensolver failed: LAPACK info = {0}")]
    EigensolverFailure(i32),

    /// An eigenvalue sits too close to a requested spectral cut to decide
    /// which side it belongs to.
    #[error("spectral split at {cut} is ambiguous: eigenvalue {eigenvalue} within {tolerance:e}")]
    AmbiguousSplit {
        cut: f64,
        eigenvalue: f64,
        tolerance: f64,
    },

    /// No positive spectrum to fill; the coupling is outside the regime the
    /// model covers (kappa >= 1 territory).
    #[error("model failure: {0}")]
    ModelFailure(String),

    #[error("unknown exchange scheme: {0}")]
    UnknownScheme(String),

    #[error("SCF did not converge within {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("retraction did not converge within {iterations} iterations (residual {residual:e})")]
    RetractionDivergence { iterations: usize, residual: f64 },

    #[error("assumption infeasible: {0}")]
    Infeasible(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
