use lumitex_geometry::GeometryError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BakeError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("unknown {kind} {name:?} (known: {known})")]
    UnknownName { kind: &'static str, name: String, known: String },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = BakeError> = std::result::Result<T, E>;
