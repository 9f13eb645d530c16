use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Param(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("index out of bounds: {0}")]
    Bounds(String),

    #[error("infeasible action: sample requested with soc {soc} (needs {needed})")]
    InfeasibleAction { soc: u8, needed: u8 },

    #[error("resource limit exceeded: {0}")]
    Resource(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("episode failed at step {step}: {message}")]
    Episode { step: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot resolve dataset {}", path.display())]
    Resolution { path: PathBuf },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Param(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Param(_) | Error::Config(_) => 2,
            Error::Resource(_) => 4,
            _ => 3,
        }
    }
}
