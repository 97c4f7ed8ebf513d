use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the simulation and analysis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("outside model validity: {0}")]
    OutOfModel(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("movie covers {available:.6e} s but acquisition needs {required:.6e} s")]
    MovieTooShort { available: f64, required: f64 },

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("rank-deficient fit: {0}")]
    RankDeficient(String),

    #[error("fit did not converge after {iterations} iterations (best parameters {best:?}, cost {cost:.6e})")]
    NonConvergence {
        iterations: usize,
        best: Vec<f64>,
        cost: f64,
    },

    #[error("step size {dt:.3e} s exceeds the limit {limit:.3e} s (time constant / 100)")]
    StepTooCoarse { dt: f64, limit: f64 },

    #[error("undefined lag: {0}")]
    UndefinedLag(String),

    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("bad frame stack: {0}")]
    Format(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, with experiment context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
