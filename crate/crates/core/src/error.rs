use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures surfaced while decoding or validating a backend envelope.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed envelope at line {line}, column {column}: {message}")]
    Json {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported protocol version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("bad base64 in field `{field}`: {message}")]
    Base64 { field: &'static str, message: String },
    #[error("bad PNG in field `{field}`: {message}")]
    Png { field: &'static str, message: String },
    #[error("dimension mismatch: {0}")]
    Dimensions(String),
    #[error("response id `{found}` does not echo request id `{expected}`")]
    RequestIdMismatch { expected: String, found: String },
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("frame of {0} bytes exceeds the frame limit")]
    FrameTooLarge(usize),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("checker placement: {0}")]
    Placement(String),
    #[error("patch sampling: {0}")]
    Sampling(String),
    #[error("estimation failed: {0}")]
    EstimationFailed(String),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    /// The transport broke (process died, connection refused); retrying may help.
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend timed out after {0} ms")]
    Timeout(u64),
    #[error("backend reported failure [{code}]: {message}")]
    Backend { code: String, message: String },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("config: {0}")]
    Config(String),
    #[error("image codec: {0}")]
    Codec(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Context {
        context: String,
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

    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, skipping context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for transport-level failures a caller may retry.
    pub fn is_retriable(&self) -> bool {
        matches!(self.root(), Error::Transport(_) | Error::Timeout(_))
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
