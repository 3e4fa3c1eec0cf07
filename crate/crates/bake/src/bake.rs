//! Back-projection of per-view material images into the atlas.

use lumitex_geometry::raster::{frontality, fragment_uv, rasterize_fragments};
use lumitex_geometry::texel::{occupancy, texel_id, wrap_uv};
use lumitex_geometry::{Image, TriMesh, ViewSpec, DEFAULT_GRAZING_CUTOFF};

use crate::atlas::{Material, TextureAtlas};
use crate::error::{BakeError, Result};
use crate::registry::Registry;

/// One view's contribution: albedo (3 channels) and metallic-roughness
/// (channels 0 and 1 of a 3-channel image) at the view's resolution.
#[derive(Clone, Copy, Debug)]
pub struct BakeView<'a> {
    pub view: &'a ViewSpec,
    pub albedo: &'a Image,
    pub mr: &'a Image,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TexelSample {
    pub value: [f64; 5],
    pub score: f64,
}

/// Resolves the pixel samples that landed on one texel, given in view order
/// then scanline order.
pub trait BlendStrategy {
    fn blend(&self, samples: &[TexelSample]) -> [f64; 5];
}

/// Winner-take-all: the most frontal sample, earliest on ties.
pub struct Frontal;

impl BlendStrategy for Frontal {
    fn blend(&self, samples: &[TexelSample]) -> [f64; 5] {
        let mut best = &samples[0];
        for s in &samples[1..] {
            if s.score > best.score {
                best = s;
            }
        }
        best.value
    }
}

/// Frontality-weighted mean of every sample.
pub struct Weighted;

impl BlendStrategy for Weighted {
    fn blend(&self, samples: &[TexelSample]) -> [f64; 5] {
        let mut acc = [0.0; 5];
        let mut wsum = 0.0;
        for s in samples {
            for (a, v) in acc.iter_mut().zip(s.value) {
                *a += s.score * v;
            }
            wsum += s.score;
        }
        acc.map(|a| a / wsum)
    }
}

pub fn blend_registry() -> Registry<dyn BlendStrategy> {
    let mut r: Registry<dyn BlendStrategy> = Registry::new("blend strategy");
    r.register("frontal", Box::new(Frontal));
    r.register("weighted", Box::new(Weighted));
    r
}

/// Splat every depth-tested pixel with frontality at least `cutoff` into the
/// texel its surface point maps to, then resolve each texel's samples with
/// `blend`. Texels outside the mesh's UV occupancy are ignored.
pub fn bake_with(mesh: &TriMesh, views: &[BakeView], res: usize, blend: &dyn BlendStrategy, cutoff: f64) -> Result<TextureAtlas> {
    let occupied = occupancy(mesh, res);
    let mut samples: Vec<Vec<TexelSample>> = vec![Vec::new(); res * res];
    for bv in views {
        let (w, h) = (bv.view.width, bv.view.height);
        for img in [bv.albedo, bv.mr] {
            if img.width != w || img.height != h || img.channels != 3 {
                return Err(BakeError::Contract(format!(
                    "view {} is {w}x{h} but its image is {}x{}x{}",
                    bv.view.index, img.width, img.height, img.channels
                )));
            }
        }
        let buf = rasterize_fragments(mesh, bv.view);
        for y in 0..h {
            for x in 0..w {
                let Some(f) = buf.get(x, y) else { continue };
                let score = frontality(mesh, bv.view, x, y, f);
                if score < cutoff {
                    continue;
                }
                let id = texel_id(wrap_uv(fragment_uv(mesh, f)).0, res) as usize;
                if !occupied.contains(id) {
                    continue;
                }
                let a = bv.albedo.pixel(x, y);
                let m = bv.mr.pixel(x, y);
                samples[id].push(TexelSample {
                    value: [a[0], a[1], a[2], m[0], m[1]],
                    score,
                });
            }
        }
    }
    let mut atlas = TextureAtlas::new(res);
    for (id, s) in samples.iter().enumerate() {
        if s.is_empty() {
            continue;
        }
        atlas.set(id, Material::from_array(blend.blend(s)));
        atlas.mask.insert(id);
    }
    Ok(atlas)
}

pub fn bake(mesh: &TriMesh, views: &[BakeView], res: usize) -> Result<TextureAtlas> {
    bake_with(mesh, views, res, &Frontal, DEFAULT_GRAZING_CUTOFF)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64, score: f64) -> TexelSample {
        TexelSample { value: [v; 5], score }
    }

    #[test]
    fn frontal_picks_highest_score_first_on_ties() {
        assert_eq!(Frontal.blend(&[s(1.0, 0.5), s(2.0, 0.9), s(3.0, 0.9)])[0], 2.0);
    }

    #[test]
    fn weighted_is_score_weighted_mean() {
        let v = Weighted.blend(&[s(1.0, 1.0), s(4.0, 2.0)])[0];
        assert!((v - 3.0).abs() < 1e-15);
    }

    #[test]
    fn registry_has_both_strategies() {
        assert_eq!(blend_registry().names(), vec!["frontal", "weighted"]);
    }
}
