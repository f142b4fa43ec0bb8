use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("misaligned traces: {0}")]
    Misaligned(String),

    #[error("degenerate axis: {0} has zero range")]
    DegenerateAxis(&'static str),

    #[error("no spectral bins in band {lo_hz} Hz .. {hi_hz} Hz")]
    EmptyBand { lo_hz: f64, hi_hz: f64 },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("unknown magic {found:?}, expected {expected:?}")]
    UnknownMagic { found: [u8; 4], expected: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("length mismatch: header declares {declared} samples, payload holds {actual}")]
    LengthMismatch { declared: u64, actual: u64 },

    #[error("stale forward cache: {0}")]
    StaleCache(&'static str),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than bad input or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFiniteLoss { .. })
    }
}
