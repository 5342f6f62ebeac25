//! Error types shared across the toolkit.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected} coefficients, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("spectral gap is not positive (a2 - a1 = {gap:.6e}); linearized stability fails")]
    StabilityAssumptionViolated { gap: f64 },

    #[error("no convergence after {iterations} iterations (last residual {residual:.3e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("numerical blowup at t = {t:.6}")]
    NumericalBlowup { t: f64 },

    #[error("controllability Gramian for mode {mode} is numerically singular (cond ~ {condition:.3e})")]
    DegenerateMode { mode: usize, condition: f64 },

    #[error("control integration blew up at t = {t:.6}; control is infeasible")]
    InfeasibleControl { t: f64 },

    #[error("construction failed: {what} (measured {measured:.3e}, required {required:.3e})")]
    ConstructionFailed {
        what: &'static str,
        measured: f64,
        required: f64,
    },

    #[error("oracle inconsistency: quadrature value {quadrature:.6e} vs energy identity {identity:.6e} ({rel:.2}% off)")]
    OracleInconsistency {
        quadrature: f64,
        identity: f64,
        rel: f64,
    },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
