use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("buffer ownership violation: {0}")]
    Ownership(String),

    #[error("buffer request of {requested} bytes exceeds the largest size class ({max} bytes)")]
    BufferTooLarge { requested: usize, max: usize },

    #[error("pipeline is shut down")]
    Shutdown,

    #[error("task {id} failed: {cause}")]
    TaskFailed { id: u64, cause: String },

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("malformed message: {0}")]
    Malformed(String),

    #[error("remote error {code}: {message}")]
    Remote { code: u16, message: String },

    #[error("session failed: {0}")]
    SessionFailed(String),

    #[error("transport error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn malformed(msg: impl Into<String>) -> Self {
        Error::Malformed(msg.into())
    }
}
