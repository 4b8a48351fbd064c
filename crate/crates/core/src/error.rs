use std::path::PathBuf;

use thiserror::Error;

/// Location-carrying failure from a binary decoder.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at byte offset {offset}")]
pub struct FormatError {
    pub offset: usize,
    pub kind: FormatErrorKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FormatErrorKind {
    #[error("truncated input: needed {needed} more bytes, {available} available")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic number 0x{0:08x}")]
    BadMagic(u32),
    #[error("dimension product overflows addressable size")]
    DimOverflow,
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("malformed record: {0}")]
    Malformed(String),
}

impl FormatError {
    pub fn new(offset: usize, kind: FormatErrorKind) -> Self {
        Self { offset, kind }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// Caller passed arguments that violate an operation's preconditions.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("format error in {source_name}: {err}")]
    Format {
        source_name: String,
        #[source]
        err: FormatError,
    },

    #[error("config error{}: {message}", location.map(|(l, c)| format!(" at line {l}, column {c}")).unwrap_or_default())]
    Config {
        message: String,
        location: Option<(usize, usize)>,
    },

    /// A velocity or updated position became NaN or infinite.
    #[error("numerical divergence at step {step}: particle {particle} left the finite range")]
    Divergence { step: usize, particle: usize },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 for numerical divergence, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
