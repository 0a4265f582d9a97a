use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize, usize),
        right: (usize, usize, usize),
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength {
        len: usize,
        shape: (usize, usize, usize),
    },

    #[error("empty tensor")]
    Empty,

    #[error("expected a single-channel tensor, got {0} channels")]
    NotSingleChannel(usize),

    #[error("structuring element {se_rows}x{se_cols} too large for {height}x{width} input")]
    SeTooLarge {
        se_rows: usize,
        se_cols: usize,
        height: usize,
        width: usize,
    },

    #[error("channel mismatch: layer expects {expected} input channels, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("tape does not match: {0}")]
    TapeMismatch(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },

    #[error("not a morphon checkpoint (bad magic)")]
    BadMagic,

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Image {
            path: path.into(),
            message: message.into(),
        }
    }
}
