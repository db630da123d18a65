use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range (len {len})")]
    OutOfRange { index: usize, len: usize },

    #[error("point {0:?} lies outside the unit box")]
    OutsideUnitBox([f64; 3]),

    #[error("voxel {voxel:?} outside level shape {shape:?}")]
    VoxelOutOfRange { voxel: [u32; 3], shape: [u32; 3] },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("missing forward cache: {0}")]
    MissingCache(&'static str),

    #[error("degenerate camera {image_id}: {reason}")]
    DegenerateCamera { image_id: u32, reason: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("malformed frame at offset {offset}: {reason}")]
    Frame { offset: u64, reason: String },

    #[error("timed out waiting for worker {worker} (batch {batch})")]
    Timeout { worker: usize, batch: u64 },

    #[error("worker {worker} unreachable: {reason}")]
    Unreachable { worker: usize, reason: String },

    #[error("{}:{line}: {reason}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }
}
