use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("stale tape: parameters changed since the forward pass")]
    StaleTape,

    #[error("pair budget exceeded: k + l = {requested} > {available} off-diagonal entries")]
    PairBudget { requested: usize, available: usize },

    #[error("positive pair set is empty")]
    EmptyPositives,

    #[error("empty index set")]
    EmptyIndexSet,

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown strategy `{0}`")]
    UnknownStrategy(String),

    #[error("io error on {path}: {source}")]
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
    /// Stable, machine-parsable category used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::MissingFile(_) | Error::Parse { .. } | Error::InvalidGraph(_) => "data-format",
            Error::Config(_) | Error::UnknownStrategy(_) | Error::PairBudget { .. } => "config",
            Error::Shape(_) | Error::StaleTape => "shape",
            Error::NonFinite(_) | Error::EmptyPositives => "numeric",
            Error::EmptyIndexSet | Error::Evaluation(_) => "evaluation",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json { .. } => "data-format",
        }
    }

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
}
