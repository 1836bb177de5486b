use thiserror::Error;

/// Errors produced anywhere in the codec.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed PLY: {0}")]
    Ply(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("model mismatch: {0}")]
    ModelMismatch(String),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("training failed: {0}")]
    Training(String),
}

impl Error {
    /// Process exit code for this error: 1 for usage or input problems,
    /// 2 for integrity and decode failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Corrupt(_) | Error::Checksum(_) | Error::ModelMismatch(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn corrupt(msg: impl Into<String>) -> Error {
    Error::Corrupt(msg.into())
}
