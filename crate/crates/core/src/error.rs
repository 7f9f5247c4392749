use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Newton solver did not converge at knot {knot} (residual {residual:.3e} after {iterations} iterations)")]
    NonConvergence {
        knot: usize,
        residual: f64,
        iterations: usize,
    },

    #[error("support reached the grid boundary at knot {knot}; enlarge the box")]
    DomainTooSmall { knot: usize },

    #[error("ellipticity violated at cell {cell}: eigenvalues ({min_eig:.4e}, {max_eig:.4e}) outside [1/{lambda}, {lambda}]")]
    EllipticityViolation {
        cell: usize,
        min_eig: f64,
        max_eig: f64,
        lambda: f64,
    },

    #[error("conjugate gradient did not converge (relative residual {residual:.3e} after {iterations} iterations)")]
    CgNonConvergence { residual: f64, iterations: usize },

    #[error("subordination quadrature underflow at t = {t}")]
    QuadratureUnderflow { t: f64 },

    #[error("detachment set has no node whose full stencil lies inside it")]
    EmptyInterior,

    #[error("spectral decomposition unavailable: {0}")]
    Spectral(String),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
