use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid law: {0}")]
    InvalidLaw(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("moment matrix numerically singular at degree {degree}")]
    SingularMoments { degree: usize },

    #[error("no hyperbolic cross threshold yields {n} test functions")]
    UnrealizableBasisSize { n: usize },

    #[error("quadrature did not converge (error estimate {error_estimate:e})")]
    QuadratureNotConverged { error_estimate: f64 },

    #[error("singular Gram matrix (reciprocal condition {rcond:e})")]
    SingularGram { rcond: f64 },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("coincident points with zero regularization")]
    CoincidentPoints,

    #[error("stalled: {what} underflowed to {value:e}")]
    Stall { what: &'static str, value: f64 },

    #[error("constraint flow has a zero field at an infeasible point (residual {residual:e})")]
    ZeroFlowField { residual: f64 },

    #[error("not converged after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("NNLS active set did not converge after {pivots} pivots")]
    NnlsNotConverged { pivots: usize },

    #[error("infeasible input: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
