//! View selection, UV back-projection baking and seam dilation.

pub mod atlas;
pub mod bake;
pub mod coverage;
pub mod dilate;
pub mod error;
pub mod registry;
pub mod select;

pub use atlas::{render_material, Material, MaterialViews, SampleStats, TextureAtlas};
pub use bake::{bake, bake_with, blend_registry, BakeView, BlendStrategy, Frontal, TexelSample, Weighted};
pub use coverage::{coverage_report, CoverageReport, CoverageState, ViewGain};
pub use dilate::seam_dilate;
pub use error::{BakeError, Result};
pub use registry::Registry;
pub use select::{candidate_set, greedy_select, selector_registry, Greedy, Pick, Selection, StaticRank, ViewSelector};
