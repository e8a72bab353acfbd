use std::path::PathBuf;

use crate::tensor::Dims5;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: dimension mismatch on axis `{axis}`: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{op}: incompatible shapes {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Dims5,
        right: Dims5,
    },

    #[error("{op}: {reason}")]
    InvalidInput { op: &'static str, reason: String },

    #[error("{op}: non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("backward called on a value that does not depend on any differentiable leaf")]
    Detached,

    #[error("backward requires a scalar loss, got {0}")]
    NonScalarLoss(Dims5),

    #[error("noise bank is empty but deterioration was requested")]
    EmptyNoiseBank,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("video {video} has {frames} frames, at least {required} are required")]
    VideoTooShort {
        video: usize,
        frames: usize,
        required: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("frame data: {0}")]
    Frames(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic tag, not a checkpoint file")]
    BadMagic,
    #[error("unsupported version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("file truncated while reading {what}")]
    Truncated { what: &'static str },
    #[error("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("tensor name is not valid UTF-8")]
    BadName,
    #[error("tensor `{name}`: {reason}")]
    Malformed { name: String, reason: String },
    #[error("tensor `{name}`: checkpoint has shape {found:?} but the model expects {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor `{0}` is required by the model but missing from the checkpoint")]
    Missing(String),
    #[error("tensor `{0}` in the checkpoint is not part of the model")]
    Unexpected(String),
}
