use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("motion direction undefined for a zero velocity vector")]
    UndefinedDirection,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown config key `{key}` at line {line}")]
    UnknownKey { line: usize, key: String },

    #[error("threshold estimation failed: {0} (fall back to explicit thresholds v_th=0.5, omega_th=0.05)")]
    Estimation(String),

    #[error("coverage error: {0}")]
    Coverage(String),

    #[error("channel `{0}` has zero variance")]
    DegenerateChannel(String),

    #[error("recording too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("empty result: {0}")]
    EmptyResult(String),

    #[error("not supported: {0}")]
    NotSupported(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("invalid class label {0}")]
    InvalidLabel(usize),

    #[error("non-finite gradient in layer `{0}`")]
    Numerical(String),

    #[error("optimiser diverged: non-finite parameter after step")]
    Divergence,

    #[error("training failed at epoch {epoch}: {msg}")]
    Training { epoch: usize, msg: String },

    #[error("file error at {}: {msg}", path.display())]
    File { path: PathBuf, msg: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, msg: impl std::fmt::Display) -> Self {
        Error::File {
            path: path.into(),
            msg: msg.to_string(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) | Error::Parse { .. } | Error::UnknownKey { .. } | Error::NotSupported(_) => 2,
            Error::Training { .. } | Error::Divergence | Error::Numerical(_) => 4,
            _ => 3,
        }
    }
}
