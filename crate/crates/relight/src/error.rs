use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RelightError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid light rig: {0}")]
    InvalidRig(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Geometry(#[from] lumitex_geometry::GeometryError),
}

pub type Result<T, E = RelightError> = std::result::Result<T, E>;
