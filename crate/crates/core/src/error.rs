use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("ill-conditioned eigenbasis (condition number {cond:e})")]
    IllConditioned { cond: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("singular logarithm: eigenvalue {mode} has modulus {modulus:e}")]
    SingularLog { mode: usize, modulus: f64 },

    #[error("step size mismatch: model h = {model}, force h = {force}")]
    StepSize { model: f64, force: f64 },

    #[error("newton did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("nnls did not converge after {iterations} iterations (residual {residual:e})")]
    Nnls { iterations: usize, residual: f64 },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::Dimension { expected, got }
    }

    /// True for failures caused by the input data or files rather than the numerics.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Io(_)
            | Error::Format(_)
            | Error::Config(_)
            | Error::InvalidModel(_)
            | Error::Dimension { .. }
            | Error::Domain(_)
            | Error::InsufficientData(_)
            | Error::DegenerateData(_)
            | Error::StepSize { .. } => true,
            Error::Step { source, .. } => source.is_data_error(),
            _ => false,
        }
    }
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dim(expected, got))
    }
}
