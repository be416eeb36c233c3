use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{name} = {value} is outside its domain {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NonConvergence {
        what: &'static str,
        iterations: usize,
    },

    #[error("eigenvalue {index} did not converge within {iterations} QL iterations")]
    EigenNonConvergence { index: usize, iterations: usize },

    #[error("simplex iterate left the positivity floor at coordinate {index} (value {value:e})")]
    SimplexFloor { index: usize, value: f64 },

    #[error("no saddle point beyond the spectral edge")]
    SaddleNotFound,

    #[error("subspace construction needs {required} directions but the budget is {budget}")]
    SubspaceBudget { required: usize, budget: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(name: &'static str, value: f64, domain: &'static str) -> Result<T> {
    Err(Error::Domain {
        name,
        value,
        domain,
    })
}
