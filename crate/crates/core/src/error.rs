use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported dimension {requested}: direction-number table covers 1..={max}")]
    UnsupportedDimension { requested: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular proposal: {0}")]
    SingularProposal(String),

    #[error("degenerate weights at stage {stage}: all weights are zero or non-finite")]
    DegenerateWeights { stage: usize },

    #[error("target requires self-normalized weights: {0} is known only up to a constant")]
    UnnormalizedTarget(String),

    #[error("integrand {integrand} is non-finite at stage {stage}, sample {sample}")]
    NonFiniteIntegrand {
        integrand: String,
        stage: usize,
        sample: usize,
    },

    #[error("run failed at stage {stage}: {reason}")]
    Run { stage: usize, reason: String },

    #[error("mode search did not converge after {iterations} iterations (gradient norm {grad_norm:e})")]
    ModeNotConverged { iterations: usize, grad_norm: f64 },

    #[error("slope fit: {0}")]
    Fit(String),

    #[error("{path}: {message}")]
    Ingest { path: PathBuf, message: String },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
