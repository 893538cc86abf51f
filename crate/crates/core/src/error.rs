use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's input was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A numerical routine could not produce a valid result.
    #[error("numeric failure: {0}")]
    Numeric(String),
    /// A persisted file did not match the expected format.
    #[error("format error: {0}")]
    Format(String),
    /// A store record was missing a required channel.
    #[error("video '{id}' is missing the {channel} channel")]
    MissingChannel { id: String, channel: String },
    #[error("duplicate id '{0}'")]
    DuplicateId(String),
    /// Training diverged past the abort threshold.
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
