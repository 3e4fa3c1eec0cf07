//! UV-space PBR texture sets.

use std::path::Path;

use lumitex_geometry::raster::{fragment_uv, rasterize_fragments};
use lumitex_geometry::texel::{texel_center, wrap_uv};
use lumitex_geometry::{BitDepth, Image, TexelSet, TriMesh, Uv, ViewSpec};

use crate::error::{BakeError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub albedo: [f64; 3],
    pub metallic: f64,
    pub roughness: f64,
}

impl Material {
    pub const ZERO: Material = Material {
        albedo: [0.0; 3],
        metallic: 0.0,
        roughness: 0.0,
    };

    pub fn to_array(self) -> [f64; 5] {
        [self.albedo[0], self.albedo[1], self.albedo[2], self.metallic, self.roughness]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            albedo: [a[0], a[1], a[2]],
            metallic: a[3],
            roughness: a[4],
        }
    }
}

/// Albedo, metallic and roughness layers at atlas resolution. `mask` holds
/// the baked (covered) texels and `filled` the texels written by seam
/// dilation; every other texel is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureAtlas {
    pub res: usize,
    pub albedo: Image,
    pub metallic: Image,
    pub roughness: Image,
    pub mask: TexelSet,
    pub filled: TexelSet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SampleStats {
    pub samples: usize,
    /// Samples that read at least one texel outside the coverage mask.
    pub outside_coverage: usize,
}

impl TextureAtlas {
    pub fn new(res: usize) -> Self {
        Self {
            res,
            albedo: Image::new(res, res, 3),
            metallic: Image::new(res, res, 1),
            roughness: Image::new(res, res, 1),
            mask: TexelSet::new(res),
            filled: TexelSet::new(res),
        }
    }

    /// Atlas whose texels in `region` take `f(texel center uv)`; the region
    /// becomes the coverage mask.
    pub fn from_fn(res: usize, region: &TexelSet, f: impl Fn(Uv) -> Material) -> Self {
        let mut atlas = Self::new(res);
        for id in region.iter() {
            let (x, y) = (id % res, id / res);
            atlas.set(id, f(texel_center(x, y, res)));
        }
        atlas.mask = region.clone();
        atlas
    }

    pub fn get(&self, id: usize) -> Material {
        let (x, y) = (id % self.res, id / self.res);
        let a = self.albedo.pixel(x, y);
        Material {
            albedo: [a[0], a[1], a[2]],
            metallic: self.metallic.pixel(x, y)[0],
            roughness: self.roughness.pixel(x, y)[0],
        }
    }

    pub fn set(&mut self, id: usize, m: Material) {
        let (x, y) = (id % self.res, id / self.res);
        self.albedo.pixel_mut(x, y).copy_from_slice(&m.albedo);
        self.metallic.pixel_mut(x, y)[0] = m.metallic;
        self.roughness.pixel_mut(x, y)[0] = m.roughness;
    }

    /// Texels holding data: covered or dilation-filled.
    pub fn valid(&self) -> TexelSet {
        let mut v = self.mask.clone();
        v.union_with(&self.filled);
        v
    }

    /// Bilinear lookup between texel centers with clamp-to-edge addressing.
    /// Taps on texels without data are dropped and the remaining weights
    /// renormalized; if none of the four taps holds data the nearest texel
    /// is returned as is.
    pub fn sample(&self, uv: Uv, valid: &TexelSet, stats: &mut SampleStats) -> Material {
        let (uv, _) = wrap_uv(uv);
        let r = self.res as f64;
        let fx = uv[0] * r - 0.5;
        let fy = (1.0 - uv[1]) * r - 0.5;
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - x0, fy - y0);
        let clamp = |v: f64| (v.max(0.0) as usize).min(self.res - 1);
        let taps = [
            (clamp(x0), clamp(y0), (1.0 - tx) * (1.0 - ty)),
            (clamp(x0 + 1.0), clamp(y0), tx * (1.0 - ty)),
            (clamp(x0), clamp(y0 + 1.0), (1.0 - tx) * ty),
            (clamp(x0 + 1.0), clamp(y0 + 1.0), tx * ty),
        ];
        stats.samples += 1;
        let mut acc = [0.0; 5];
        let mut wsum = 0.0;
        let mut outside = false;
        for &(x, y, w) in &taps {
            let id = y * self.res + x;
            if w > 0.0 && !self.mask.contains(id) {
                outside = true;
            }
            if !valid.contains(id) {
                continue;
            }
            let v = self.get(id).to_array();
            for (a, b) in acc.iter_mut().zip(v) {
                *a += w * b;
            }
            wsum += w;
        }
        stats.outside_coverage += outside as usize;
        if wsum > 0.0 {
            Material::from_array(acc.map(|a| a / wsum))
        } else {
            let x = clamp(fx.round());
            let y = clamp(fy.round());
            self.get(y * self.res + x)
        }
    }

    /// Writes `albedo.png` (8-bit RGB), `metallic.png` and `roughness.png`
    /// (8-bit gray) and `coverage.png` (8-bit gray: 1 covered, 0.5 filled).
    pub fn save_pngs(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.albedo.save_png(dir.join("albedo.png"), BitDepth::Eight)?;
        self.metallic.save_png(dir.join("metallic.png"), BitDepth::Eight)?;
        self.roughness.save_png(dir.join("roughness.png"), BitDepth::Eight)?;
        let mut cov = Image::new(self.res, self.res, 1);
        for id in self.filled.iter() {
            cov.data[id] = 0.5;
        }
        for id in self.mask.iter() {
            cov.data[id] = 1.0;
        }
        cov.save_png(dir.join("coverage.png"), BitDepth::Eight)?;
        Ok(())
    }

    pub fn load_pngs(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let albedo = Image::load_png(dir.join("albedo.png"))?;
        let metallic = Image::load_png(dir.join("metallic.png"))?;
        let roughness = Image::load_png(dir.join("roughness.png"))?;
        let cov = Image::load_png(dir.join("coverage.png"))?;
        let res = albedo.width;
        if albedo.height != res || albedo.channels != 3 || !metallic.same_shape(&roughness) || metallic.width != res || cov.width != res {
            return Err(BakeError::Contract(format!("{}: atlas layers disagree in shape", dir.display())));
        }
        let mut mask = TexelSet::new(res);
        let mut filled = TexelSet::new(res);
        for (id, &c) in cov.data.iter().enumerate() {
            if c > 0.75 {
                mask.insert(id);
            } else if c > 0.25 {
                filled.insert(id);
            }
        }
        Ok(Self {
            res,
            albedo,
            metallic,
            roughness,
            mask,
            filled,
        })
    }
}

/// Per-view material images rendered by texture lookup (no shading).
#[derive(Clone, Debug)]
pub struct MaterialViews {
    /// 3 channels.
    pub albedo: Image,
    /// 3 channels: metallic, roughness, 0.
    pub mr: Image,
    /// 1 channel, 1 on covered pixels.
    pub mask: Image,
    pub stats: SampleStats,
}

pub fn render_material(mesh: &TriMesh, atlas: &TextureAtlas, view: &ViewSpec) -> MaterialViews {
    let buf = rasterize_fragments(mesh, view);
    let (w, h) = (view.width, view.height);
    let mut out = MaterialViews {
        albedo: Image::new(w, h, 3),
        mr: Image::new(w, h, 3),
        mask: Image::new(w, h, 1),
        stats: SampleStats::default(),
    };
    let valid = atlas.valid();
    for y in 0..h {
        for x in 0..w {
            let Some(f) = buf.get(x, y) else { continue };
            let m = atlas.sample(fragment_uv(mesh, f), &valid, &mut out.stats);
            out.albedo.pixel_mut(x, y).copy_from_slice(&m.albedo);
            out.mr.pixel_mut(x, y).copy_from_slice(&[m.metallic, m.roughness, 0.0]);
            out.mask.pixel_mut(x, y)[0] = 1.0;
        }
    }
    out
}
