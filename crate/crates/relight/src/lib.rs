//! Cook-Torrance GGX relighting of textured meshes, evaluation cameras and
//! image metrics.

pub mod brdf;
pub mod error;
pub mod light;
pub mod metrics;
pub mod render;

pub use brdf::{ggx_brdf, PbrSample, MIN_ROUGHNESS};
pub use error::{RelightError, Result};
pub use light::{preset_rigs, DirectionalLight, LightRig};
pub use lumitex_geometry::fibonacci_views;
pub use metrics::{psnr, psnr_masked, read_metrics_csv, write_metrics_csv, MetricRow};
pub use render::{render_relit, shade, Relit};
