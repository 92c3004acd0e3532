use std::path::PathBuf;

use thiserror::Error;

/// Everything the command-line tool can fail with. `exit_code` maps usage
/// and configuration problems to 2 and everything else to 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),
    #[error("{}: config error at {pointer}: {message}", path.display())]
    Config {
        path: PathBuf,
        /// JSON pointer to the offending field (`""` for the document).
        pointer: String,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A file that was read but could not be understood.
    #[error("{}: {message}", path.display())]
    Load { path: PathBuf, message: String },
    #[error("{0}")]
    Runtime(String),
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config { .. } => 2,
            _ => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn load(path: impl Into<PathBuf>, message: impl std::fmt::Display) -> Error {
        Error::Load {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub fn runtime(message: impl std::fmt::Display) -> Error {
        Error::Runtime(message.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
