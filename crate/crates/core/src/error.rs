use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: {left:?} vs {right:?}")]
    Dimension {
        context: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("degenerate factor: {0}")]
    DegenerateFactor(String),

    #[error("image {path} is {actual}x{actual} but the model expects {expected}x{expected}; resize it first")]
    ResizeRequired {
        path: String,
        actual: usize,
        expected: usize,
    },

    #[error("failed to decode {path}: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("no usable images in {0}")]
    EmptyDataset(PathBuf),

    #[error("checkpoint has unknown magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionSkew { found: u32, expected: u32 },

    #[error("checkpoint checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed checkpoint: {0}")]
    Malformed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            context,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}
