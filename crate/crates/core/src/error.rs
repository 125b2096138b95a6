use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },

    #[error("fixed-point iteration diverged at iteration {iteration} (residual {residual:.3e})")]
    Divergence { iteration: usize, residual: f64 },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("tensor file: bad magic bytes {found:?}")]
    BadMagic { found: [u8; 4] },

    #[error("tensor file: unsupported version {0}")]
    UnsupportedVersion(u32),

    #[error("tensor file: truncated while reading {context}")]
    Truncated { context: &'static str },

    #[error("tensor file: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("tensor file: malformed entry: {0}")]
    Malformed(String),

    #[error("config error at {pointer}: {message}")]
    Config { pointer: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_) | Error::Config { .. })
    }
}
