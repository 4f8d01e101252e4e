use thiserror::Error;

/// Failures raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("capacity exceeded: {what} = {value} is above the cap {cap}")]
    CapacityExceeded {
        what: &'static str,
        value: usize,
        cap: usize,
    },

    #[error("numerical inconsistency: {0}")]
    NumericalInconsistency(String),

    #[error("range hypothesis violated: range(X~^T) is not contained in range(X~^T X) (residual {residual:.3e})")]
    HypothesisViolated { residual: f64 },

    #[error("not convergent: restricted contraction norm {norm:.6} >= 1")]
    NotConvergent { norm: f64 },

    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    #[error("quadrature failure: {0}")]
    QuadratureFailure(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NonConvergence { iterations: usize, last_change: f64 },

    #[error("normalization failure: total mass {mass:.5} outside [{lo}, {hi}]")]
    NormalizationFailure { mass: f64, lo: f64, hi: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable variant name, used by the command-line harness when reporting failures.
    pub fn name(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "InvalidInput",
            Error::CapacityExceeded { .. } => "CapacityExceeded",
            Error::NumericalInconsistency(_) => "NumericalInconsistency",
            Error::HypothesisViolated { .. } => "HypothesisViolated",
            Error::NotConvergent { .. } => "NotConvergent",
            Error::AssumptionViolated(_) => "AssumptionViolated",
            Error::QuadratureFailure(_) => "QuadratureFailure",
            Error::NonConvergence { .. } => "NonConvergence",
            Error::NormalizationFailure { .. } => "NormalizationFailure",
            Error::Io(_) => "Io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
