use std::path::PathBuf;

/// Crate-wide error type.
///
/// Three broad failure classes cover everything this library does: callers
/// handing in values that violate a documented precondition, on-disk data
/// that does not match its declared format, and plain I/O trouble. Config
/// parsing gets its own variant so the CLI can map it to a distinct exit
/// code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}: format error at byte {offset}: {message}", path.display())]
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for [`Error::InvalidArgument`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
