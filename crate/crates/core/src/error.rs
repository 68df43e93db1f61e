use thiserror::Error;

/// Errors raised by the numerical routines and the file exchange layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("time {time} outside the horizon [0, {horizon}]")]
    OutOfDomain { time: f64, horizon: f64 },

    #[error("covariance is not positive semidefinite: min eigenvalue {min_eigenvalue:e} below -{tol:e} * {max_eigenvalue:e}")]
    NotPositiveSemidefinite {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
        tol: f64,
    },

    #[error("degenerate covariance model: {0}")]
    DegenerateModel(String),

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("degenerate integrand: {0}")]
    DegenerateIntegrand(String),

    #[error("unsupported chaos order {order} (maximum {max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("growth condition violated: {0}")]
    GrowthConditionViolated(String),

    #[error("basis is not orthonormal under the grid quadrature: {0}")]
    InvalidBasis(String),

    #[error("conditioning functionals are linearly dependent (condition number {condition:e})")]
    DependentFunctionals { condition: f64 },

    #[error("trace condition failed: {0}")]
    TraceCondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
