use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid or inconsistent configuration; `field` names the offending key or section.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// Input that is well-formed but carries no usable data (empty channel, empty file).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// Detector timing cannot resolve the requested rate without pile-up.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// Malformed photon or CSV file; `position` is a line number or byte offset.
    #[error("parse error at {position}: {message}")]
    Parse { position: String, message: String },

    /// A fit or solver failed to converge.
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }

    pub(crate) fn parse(position: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            position: position.into(),
            message: message.into(),
        }
    }
}
