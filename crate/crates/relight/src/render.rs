use lumitex_bake::{SampleStats, TextureAtlas};
use lumitex_geometry::raster::{fragment_normal, fragment_uv, rasterize_fragments};
use lumitex_geometry::{Image, TriMesh, Vec3, ViewSpec};

use crate::brdf::{ggx_brdf, PbrSample};
use crate::light::LightRig;

#[derive(Clone, Debug)]
pub struct Relit {
    /// Linear radiance before tone mapping.
    pub radiance: Image,
    /// `radiance` clamped to `[0, 1]`.
    pub image: Image,
    pub mask: Image,
    pub stats: SampleStats,
}

/// Outgoing radiance toward `v` at a point with normal `n`.
pub fn shade(n: Vec3, v: Vec3, mat: &PbrSample, rig: &LightRig) -> [f64; 3] {
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = rig.ambient[c] * mat.albedo[c];
    }
    for light in &rig.lights {
        let l = Vec3::from(light.direction);
        let nl = n.dot(l);
        if nl <= 0.0 {
            continue;
        }
        let f = ggx_brdf(n, l, v, mat);
        for c in 0..3 {
            out[c] += f[c] * light.radiance[c] * nl;
        }
    }
    out
}

/// Rasterize, look the material up bilinearly in the atlas and shade every
/// covered pixel with all lights (no shadowing) plus ambient times albedo.
pub fn render_relit(mesh: &TriMesh, atlas: &TextureAtlas, view: &ViewSpec, rig: &LightRig) -> Relit {
    let buf = rasterize_fragments(mesh, view);
    let (w, h) = (view.width, view.height);
    let mut radiance = Image::new(w, h, 3);
    let mut mask = Image::new(w, h, 1);
    let mut stats = SampleStats::default();
    let valid = atlas.valid();
    for y in 0..h {
        for x in 0..w {
            let Some(f) = buf.get(x, y) else { continue };
            let mat = PbrSample::from(atlas.sample(fragment_uv(mesh, f), &valid, &mut stats));
            let n = fragment_normal(mesh, f);
            let v = -view.ray_dir(x, y);
            radiance.pixel_mut(x, y).copy_from_slice(&shade(n, v, &mat, rig));
            mask.pixel_mut(x, y)[0] = 1.0;
        }
    }
    let mut image = radiance.clone();
    image.clamp01();
    Relit {
        radiance,
        image,
        mask,
        stats,
    }
}
