use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A numerical precondition was violated (bad temperature, zero norm, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Tensor shapes do not line up.
    #[error("shape error in {context}: {detail}")]
    Shape { context: String, detail: String },

    /// Training data is malformed (missing class, ragged rows, ...).
    #[error("data error: {0}")]
    Data(String),

    /// An operation was invoked in a state where it is undefined.
    #[error("state error: {0}")]
    State(String),

    /// An external input (file, config) could not be read or parsed.
    #[error("input error at {path}: {reason}")]
    Input { path: PathBuf, reason: String },

    /// A failure inside the stream loop, tagged with the stream index.
    #[error("stream {stream}: {source}")]
    Stream {
        stream: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn in_stream(self, stream: usize) -> Self {
        match self {
            e @ Error::Stream { .. } => e,
            e => Error::Stream {
                stream,
                source: Box::new(e),
            },
        }
    }
}
