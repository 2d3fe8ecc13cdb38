use thiserror::Error;

/// Errors raised anywhere in the pricing chain.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid contract: {0}")]
    Contract(String),

    #[error("basis construction failed: {0}")]
    Basis(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("unsupported state dimension {0} (the PDE solver handles n = 1 or 2)")]
    UnsupportedDimension(usize),

    #[error("operator assembly failed: {0}")]
    Assembly(String),

    #[error("projected SOR did not converge at time step {step} after {iterations} sweeps (last change {residual:.3e})")]
    Solver {
        step: usize,
        iterations: usize,
        residual: f64,
    },

    #[error("point outside the PDE domain: {0}")]
    Extrapolation(String),

    #[error("i/o error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
