use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{0}: no unmasked positions")]
    EmptyMask(&'static str),
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid label {label:?} for role {role}")]
    InvalidLabel { role: String, label: String },
    #[error("invalid utterance: {0}")]
    InvalidUtterance(String),
    #[error("harmonize: no annotations given")]
    NoAnnotations,
    #[error("need at least {needed} sessions for {n_folds} folds, have {have}")]
    TooFewSessions {
        needed: usize,
        have: usize,
        n_folds: usize,
    },
    #[error("session {0} has no utterances for one role")]
    EmptyRole(String),
    #[error("session leak across splits: {0:?}")]
    SessionLeak(Vec<String>),

    #[error("embedding dimension mismatch: expected {expected}, got {got} ({what})")]
    DimMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("truncated blob {path}: need {needed} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },
    #[error("record count mismatch: {0}")]
    CountMismatch(String),
    #[error("unsupported store format version {0}")]
    FormatVersion(u32),
    #[error("utterances missing from store: {0:?}")]
    MissingUtterances(Vec<String>),

    #[error("invalid config: {0}")]
    Config(String),
    #[error("non-finite gradient for parameter {param} at index {index}")]
    NonFiniteGradient { param: String, index: usize },
    #[error("empty training set")]
    EmptyTrainSet,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for bad input data, 3 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Shape { .. }
            | Error::InvalidTensor(_)
            | Error::NonFinite(_)
            | Error::EmptyMask(_)
            | Error::NonScalarLoss(_)
            | Error::NonFiniteGradient { .. }
            | Error::EmptyTrainSet => 3,
            _ => 2,
        }
    }
}
