use thiserror::Error;

/// Errors raised by grid, generator, kernel and copula construction.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MimikError {
    #[error("size limit exceeded: {what} would need {requested} (limit {limit})")]
    SizeLimit {
        what: &'static str,
        requested: usize,
        limit: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "stencil positivity violated at x = {x} (node {index}): |drift| = {drift_abs} exceeds \
         vol^2/h = {bound}; smallest admissible h is {admissible_h}"
    )]
    Positivity {
        index: usize,
        x: f64,
        drift_abs: f64,
        bound: f64,
        admissible_h: f64,
    },

    #[error(
        "correlation stencil would produce a negative rate at cell ({i}, {j}); \
         max admissible |rho| there is {max_rho}"
    )]
    CrossPositivity { i: usize, j: usize, max_rho: f64 },

    #[error("generator invariant violated: {0}")]
    InvalidGenerator(String),

    #[error("matrix is singular or not invertible (condition number {condition})")]
    Singular { condition: f64 },

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("conditional variance degenerate at x = {x}: {variance}")]
    DegenerateVariance { x: f64, variance: f64 },

    #[error("index {index} is on the boundary; an interior node is required")]
    BoundaryIndex { index: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for MimikError {
    fn from(e: std::io::Error) -> Self {
        MimikError::Io(e.to_string())
    }
}

impl From<csv::Error> for MimikError {
    fn from(e: csv::Error) -> Self {
        MimikError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for MimikError {
    fn from(e: serde_json::Error) -> Self {
        MimikError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, MimikError>;
