use std::path::PathBuf;

use lumitex_bake::BakeError;
use lumitex_geometry::GeometryError;
use lumitex_lvsm::LvsmError;
use lumitex_mvpbr::MvpbrError;
use lumitex_relight::RelightError;
use lumitex_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("stage {stage} needs {}; run `{run_first}` first", missing.display())]
    StageOrder {
        stage: &'static str,
        missing: PathBuf,
        run_first: &'static str,
    },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Bake(#[from] BakeError),
    #[error(transparent)]
    Relight(#[from] RelightError),
    #[error(transparent)]
    Mvpbr(MvpbrError),
    #[error(transparent)]
    Lvsm(LvsmError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// 2 for configuration problems, 3 for running a stage too early.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::StageOrder { .. } => 3,
            _ => 1,
        }
    }
}

impl From<MvpbrError> for CliError {
    fn from(e: MvpbrError) -> Self {
        match e {
            MvpbrError::Config(m) => Self::Config(m),
            e => Self::Mvpbr(e),
        }
    }
}

impl From<LvsmError> for CliError {
    fn from(e: LvsmError) -> Self {
        match e {
            LvsmError::Config(m) => Self::Config(m),
            e => Self::Lvsm(e),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
