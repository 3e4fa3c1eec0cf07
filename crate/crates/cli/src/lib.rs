//! Pipeline stages behind the `lumitex` binary and the procedural toy
//! dataset they train on.

pub mod config;
pub mod dataset;
pub mod error;
pub mod stages;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
