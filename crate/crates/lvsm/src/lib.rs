//! Geometry-guided novel-view synthesis used to fill texture regions the
//! generated views never saw.

mod config;
mod error;
mod model;
mod train;

pub use config::*;
pub use error::*;
pub use model::*;
pub use train::*;
