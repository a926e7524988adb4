use thiserror::Error;

/// Errors raised by the transport solver and its supporting I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("block is not positive definite ({0})")]
    NotPositiveDefinite(String),

    #[error("density is not strictly positive ({0})")]
    NonPositiveDensity(String),

    #[error("block dimension {0} exceeds the supported maximum of {max}", max = crate::block::MAX_BLOCK_DIM)]
    DimensionTooLarge(usize),

    #[error("operator basis kernel has dimension {0}, expected 1 (span of the identity)")]
    KernelAssumption(usize),

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("density contrast must exceed 1, got {0}")]
    InvalidContrast(f64),

    #[error("incomplete Cholesky failed for every diagonal shift")]
    FactorizationFailed,

    #[error("conjugate gradient breakdown: curvature {0} is not positive")]
    BreakdownDetected(f64),

    #[error("line search failed after {backtracks} backtracks (merit {merit:e}, alpha_max {alpha_max:e})")]
    LineSearchFailed {
        backtracks: usize,
        merit: f64,
        alpha_max: f64,
    },

    #[error("positivity lost after an accepted step")]
    PositivityLost,

    #[error("not converged after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
