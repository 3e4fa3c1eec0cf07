use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("mesh has no UV atlas ({0})")]
    NoUvAtlas(String),
    #[error("OBJ parse error at line {line}: {msg}")]
    Obj { line: usize, msg: String },
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid view: {0}")]
    InvalidView(String),
    #[error("image: {0}")]
    Image(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    PngEncode(#[from] png::EncodingError),
    #[error(transparent)]
    PngDecode(#[from] png::DecodingError),
}

impl GeometryError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;
