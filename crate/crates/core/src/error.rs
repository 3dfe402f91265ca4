//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by checkpoint handling, search, and the benchmark harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// The file does not start with the expected container magic.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    /// The container declares a format version this build cannot read.
    #[error("unsupported format version {found}, expected {expected}")]
    UnsupportedVersion { expected: u32, found: u32 },

    /// The payload ends before the header-declared contents do.
    #[error("truncated container: {0}")]
    Truncated(String),

    /// A loaded parameter value is NaN or infinite.
    #[error("non-finite value in tensor `{tensor}` at flat index {index}")]
    NonFinite { tensor: String, index: usize },

    /// Malformed container contents not covered by a more specific variant.
    #[error("parse error: {0}")]
    Parse(String),

    /// Two parameter sets do not share the same tensor layout.
    #[error("structural mismatch: {0}")]
    Mismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Numeric failure inside the optimizer or training loop.
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A bundle lookup referenced a task name that is not stored.
    #[error("unknown task `{0}`")]
    UnknownTask(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
