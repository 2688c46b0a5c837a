use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal of length {len} is not divisible by patch length {patch}")]
    NotDivisible { len: usize, patch: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("token {token} out of range for K = {k}")]
    TokenOutOfRange { token: usize, k: usize },

    #[error("code count mismatch: expected K = {expected}, found K = {found}")]
    KMismatch { expected: usize, found: usize },

    #[error("corpus has {distinct} distinct patches, need at least {k}")]
    CorpusTooSmall { distinct: usize, k: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instance too large for exact enumeration: {size} entries exceeds {cap}")]
    InstanceTooLarge { size: u128, cap: u64 },

    #[error("malformed model: {0}")]
    Malformed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// True for errors caused by files or stored models rather than by
    /// invalid arguments.
    pub fn is_file_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Json { .. } | Error::Malformed(_) | Error::KMismatch { .. }
        )
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
