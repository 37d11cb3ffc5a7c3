use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Core(#[from] facecurate_core::Error),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("output directory {0} is not empty; runs never overwrite earlier output")]
    OutputExists(PathBuf),

    #[error("{0} is not a halted run awaiting review")]
    NotAwaitingReview(PathBuf),

    #[error("run config changed since the run halted (digest {expected}, found {found})")]
    ConfigChanged { expected: String, found: String },

    #[error("{pending} of {total} merge candidates have no decision, first ({a}, {b})")]
    MissingDecisions {
        pending: usize,
        total: usize,
        a: String,
        b: String,
    },

    #[error("stage accounting broken: {0}")]
    Inconsistent(String),

    #[error("runs are not comparable: {0}")]
    Mismatch(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> PipelineError {
    let path = path.into();
    move |source| PipelineError::Json { path, source }
}
