use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("unsupported header field {field}: {value}")]
    UnsupportedHeader { field: &'static str, value: u32 },

    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("dimensions {dims:?} overflow the addressable size")]
    DimensionOverflow { dims: Vec<u64> },

    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(u64),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("feature channels {found} do not match head input {expected}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid label data: {0}")]
    InvalidLabel(String),

    #[error("non-finite value at flat index {0}")]
    NonFinite(usize),

    #[error("no supervised pixels")]
    EmptySelection,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("could not place {wanted} instances after {attempts} attempts")]
    InfeasiblePacking { wanted: usize, attempts: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by reading or decoding files, as opposed to
    /// inconsistent but well-formed inputs.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::BadMagic { .. }
                | Error::VersionMismatch { .. }
                | Error::UnsupportedHeader { .. }
                | Error::Truncated { .. }
                | Error::DimensionOverflow { .. }
                | Error::TrailingBytes(_)
                | Error::Parse { .. }
        )
    }
}
