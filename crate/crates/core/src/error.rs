use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the alignment library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("quaternion has zero norm")]
    ZeroQuaternion,
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("normal degenerates to zero after transform")]
    DegenerateNormal,
    #[error("invalid shape parameters: {0}")]
    InvalidShape(String),
    #[error("mesh has no triangles with positive area")]
    EmptyMesh,
    #[error("id {id} does not fit into {bits} bits")]
    IdOverflow { id: u64, bits: u32 },
    #[error("object placement failed after {0} attempts")]
    PlacementFailed(usize),
    #[error("input width {got} does not match expected {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("version mismatch in {path}: expected {expected}, found {found}")]
    Version { path: PathBuf, expected: u32, found: u32 },
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
