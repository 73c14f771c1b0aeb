use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown event name(s): {}", .0.join(", "))]
    UnknownEvents(Vec<String>),

    #[error("unknown tile {ch:?} at column {x}, row {y}")]
    UnknownTile { ch: char, x: usize, y: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("session {session}: {message}")]
    Session { session: String, message: String },

    #[error("weights incompatible: {0}")]
    Incompatible(String),

    #[error("weights file corrupt: {0}")]
    Checksum(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss is {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
