use thiserror::Error;

use crate::complementarity::ObstacleSolution;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(&'static str),

    #[error("point ({x}, {y}) lies outside the interpolation hull")]
    OutsideHull { x: f64, y: f64 },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("coefficient matrix is not elliptic at cell {cell}: smallest eigenvalue {eigenvalue}")]
    NotElliptic { cell: usize, eigenvalue: f64 },

    #[error("coefficient value {value} outside declared bounds [{lower}, {upper}]")]
    OutOfBounds { value: f64, lower: f64, upper: f64 },

    #[error("sparse linear solve failed: {0}")]
    LinearSolve(String),

    #[error("policy iteration did not converge after {iterations} policies (residual {residual:e})")]
    PolicyNonConvergence {
        iterations: usize,
        residual: f64,
        best: Box<ObstacleSolution>,
    },

    #[error("Newton iteration diverged at continuation parameter t = {t} (residual {residual:e})")]
    NewtonDivergence {
        t: f64,
        residual: f64,
        last_converged: Option<Box<crate::grid::ScalarField>>,
    },

    #[error("free boundary could not be pinned to the origin: {0}")]
    Pinning(String),

    #[error("malformed field file: {0}")]
    Format(String),

    #[error("configuration error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            name,
            reason: reason.into(),
        }
    }
}
