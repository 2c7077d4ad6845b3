use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error("{context}: line {line}: {message}")]
    Format {
        context: String,
        line: usize,
        message: String,
    },

    #[error("line count mismatch: source has {source_lines} lines, target has {target_lines}")]
    LineCountMismatch { source_lines: usize, target_lines: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("position out of range: {0}")]
    OutOfRange(String),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: &'static str },

    #[error("non-finite objective at epoch {epoch}, sentence {sentence}")]
    NonFiniteObjective { epoch: usize, sentence: usize },

    #[error("model file: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause: source,
        }
    }

    pub(crate) fn format(context: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Format {
            context: context.into(),
            line,
            message: message.into(),
        }
    }

    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteGradient { .. } | Error::NonFiniteObjective { .. })
    }
}
