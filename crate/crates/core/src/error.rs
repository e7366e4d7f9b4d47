use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("config error: {0}")]
    Config(String),

    /// A switch mask points outside the tensor it is applied to.
    #[error("corrupt switch mask: {0}")]
    Corruption(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("protocol error at byte {offset}: {reason}")]
    Protocol { offset: usize, reason: String },

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("lifecycle error: {0}")]
    Lifecycle(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn protocol(offset: usize, reason: impl Into<String>) -> Self {
        Error::Protocol {
            offset,
            reason: reason.into(),
        }
    }

    /// Io error that names the file involved.
    pub(crate) fn io_at(path: &std::path::Path, e: io::Error) -> Self {
        Error::Io(io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    }

    pub(crate) fn format(offset: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    /// Process exit code for the error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Shape(_) | Error::Domain(_) | Error::Validation(_) => 2,
            Error::Io(_) | Error::Format { .. } => 3,
            Error::Protocol { .. } | Error::Transport(_) | Error::Lifecycle(_) => 4,
            Error::Numeric(_) | Error::UndefinedCorrelation(_) | Error::Corruption(_) => 5,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::format(0, format!("csv: {other:?}")),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Config(format!("json: {e}"))
    }
}
