use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {message}")]
    Json { line: usize, message: String },

    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("generation {index} of sample {sample} has no correctness label")]
    MissingLabel { sample: String, index: usize },

    #[error("sample {0} has no most-likely generation")]
    NoMostLikely(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("eigensolver did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    NoConvergence { sweeps: usize, off_norm: f64 },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("model file: {0}")]
    Container(String),

    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
