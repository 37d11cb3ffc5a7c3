use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: line {line}: {msg}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("{path}: unexpected header {found:?}, expected {expected:?}")]
    BadHeader {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error("duplicate image_id {0:?}")]
    DuplicateImageId(String),

    #[error("record {image_id:?} has embedding_index {index} but the store holds {count} vectors")]
    EmbeddingIndexOutOfRange {
        image_id: String,
        index: usize,
        count: usize,
    },

    #[error("{path}: {msg}")]
    BadEmbeddingFile { path: PathBuf, msg: String },

    #[error("embedding count {found} does not match expected {expected}")]
    CountMismatch { expected: usize, found: usize },

    #[error("rows with norm outside 1 ± {tolerance}: {rows:?}")]
    NotNormalized { tolerance: f64, rows: Vec<usize> },

    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("subject {subject:?} has {count} images, need at least {required}")]
    TooFewImages {
        subject: String,
        count: usize,
        required: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("merge decision for ({0}, {1}) is still pending")]
    PendingDecision(String, String),

    #[error("merge decision references unknown subject {0:?}")]
    UnknownSubject(String),

    #[error("contradictory merge decisions: {0} and {1} are linked by same_person but marked different_person")]
    ContradictoryDecisions(String, String),

    #[error("subjects without a gender label: {0:?}")]
    UnlabeledSubjects(Vec<String>),

    #[error(
        "group {group:?} has no impostor pairs (needs at least 2 subjects with selected images)"
    )]
    NoImpostorPairs { group: String },

    #[error("group {group:?} has no authentic pairs")]
    NoAuthenticPairs { group: String },

    #[error("empty score list")]
    EmptyScores,

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
