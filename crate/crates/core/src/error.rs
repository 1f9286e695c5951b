use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("invalid axes: {0}")]
    InvalidAxes(String),

    #[error("invalid loss: {0}")]
    InvalidLoss(String),

    /// A forward operation produced NaN or infinity.
    #[error("non-finite value produced by `{op}` (node {node})")]
    NonFinite { op: String, node: usize },

    #[error("invalid length: {0}")]
    InvalidLength(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid frequency: {0}")]
    InvalidFrequency(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("degenerate reference: reference signal has zero power")]
    DegenerateReference,

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("parse error: {0}")]
    ParseError(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// I/O failure at `path`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
