//! Meshes, pinhole cameras, Plücker ray maps, a software rasterizer and UV
//! texel visibility.

pub mod camera;
pub mod error;
pub mod image;
pub mod mesh;
pub mod raster;
pub mod texel;
pub mod vec3;

pub use camera::{fibonacci_directions, fibonacci_views, orbit_views, CameraRecord, ViewSpec};
pub use error::{GeometryError, Result};
pub use image::{BitDepth, Image};
pub use mesh::{TriMesh, Uv};
pub use raster::{
    rasterize, rasterize_fragments, rasterize_uv_ids, visible_texels, visible_texels_with, Fragment, FragmentBuffer, GeoMaps,
    RasterDiagnostics, UvIdMap, DEFAULT_GRAZING_CUTOFF,
};
pub use texel::{occupancy, TexelSet};
pub use vec3::{Mat3, Vec3};
