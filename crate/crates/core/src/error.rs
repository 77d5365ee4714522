use std::io;

use thiserror::Error;

/// Failures while decoding one of the binary containers (SPKT, SPKD, SPKR, SPKN).
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: Vec<u8> },
    #[error("unsupported version {found} (this build reads up to {supported})")]
    UnsupportedVersion { found: u16, supported: u16 },
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("malformed payload: {0}")]
    Malformed(String),
}

impl FormatError {
    /// Stable numeric code per failure kind, used in CLI diagnostics.
    pub fn code(&self) -> u8 {
        match self {
            FormatError::BadMagic { .. } => 1,
            FormatError::UnsupportedVersion { .. } => 2,
            FormatError::CrcMismatch { .. } => 3,
            FormatError::DimensionOverflow(_) => 4,
            FormatError::UnknownDtype(_) => 5,
            FormatError::Malformed(_) => 6,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error(
        "crop window origin ({row}, {col}) size {height}x{width} exceeds frame {frame_height}x{frame_width}"
    )]
    OutOfBounds {
        row: isize,
        col: isize,
        height: usize,
        width: usize,
        frame_height: usize,
        frame_width: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular system: {0}")]
    Singular(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse classification used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Data,
    Numerical,
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidParameter(_) => ErrorCategory::Config,
            Error::DimensionMismatch { .. }
            | Error::OutOfBounds { .. }
            | Error::Format(_)
            | Error::Io(_) => ErrorCategory::Data,
            Error::Singular(_) | Error::NonFinite(_) | Error::Diverged { .. } => {
                ErrorCategory::Numerical
            }
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
