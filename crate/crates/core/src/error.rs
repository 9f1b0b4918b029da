use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Two vectors (or a vector and a layout) disagree on length.
    #[error(
        "dimension mismatch in {context}: index {index} has length {found}, expected {expected}"
    )]
    DimensionMismatch {
        context: &'static str,
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observation {observation} is not valid for {context}")]
    InvalidObservation {
        context: &'static str,
        observation: String,
    },

    #[error("action {action} out of range for agent {agent} ({count} actions)")]
    InvalidAction {
        agent: usize,
        action: usize,
        count: usize,
    },

    #[error("config error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("cannot read `{path}`: {source}")]
    MissingFile {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("numeric abort at iteration {iteration}: {message}")]
    NumericAbort { iteration: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
