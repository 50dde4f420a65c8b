use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("input too short: {0}")]
    EmptyInput(String),

    #[error("input too short for the network: {0}")]
    InputLength(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value produced at node {node} ({op})")]
    Numeric { node: usize, op: &'static str },

    #[error("numeric error: {0}")]
    NumericMsg(String),

    #[error("invalid graph state: {0}")]
    State(String),

    #[error("invalid network spec: {0}")]
    Spec(String),

    #[error("incompatible weights: {0}")]
    Incompatible(String),

    #[error("cannot sample episode: {0}")]
    Sampling(String),

    #[error("invalid episode: {0}")]
    Episode(String),

    #[error("invalid batch: {0}")]
    Batch(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("training aborted at step {step}: {source}")]
    Training {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) => 1,
            Error::Io { .. } => 2,
            Error::Numeric { .. } | Error::NumericMsg(_) | Error::Degenerate(_) => 3,
            Error::Training { .. } => 3,
            Error::Format(_) | Error::UnsupportedFormat(_) | Error::Parse { .. } => 4,
            Error::Incompatible(_) => 4,
            _ => 1,
        }
    }
}
