//! Error type shared by every pipeline stage.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A file did not conform to one of the on-disk formats.
    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    /// A caller violated an operation's preconditions.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// The GLS normal equations could not be solved.
    #[error("singular design: {message} (condition estimate {condition:.3e})")]
    Singular { message: String, condition: f64 },

    /// A stage produced nothing usable for the next one.
    #[error("pipeline error: {0}")]
    Pipeline(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad class used by front ends to pick an exit status.
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Argument(_) => ErrorClass::Config,
            Error::Singular { .. } | Error::Training(_) | Error::UndefinedMetric(_) => {
                ErrorClass::Numerical
            }
            Error::Format { .. }
            | Error::Pipeline(_)
            | Error::Lookup(_)
            | Error::Io { .. } => ErrorClass::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numerical,
}

impl ErrorClass {
    pub fn name(self) -> &'static str {
        match self {
            ErrorClass::Config => "config",
            ErrorClass::Data => "data",
            ErrorClass::Numerical => "numerical",
        }
    }
}
