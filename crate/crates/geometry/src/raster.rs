//! Z-buffered perspective rasterization into per-pixel fragments and the
//! geometry maps, UV id maps and texel visibility derived from them.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::camera::ViewSpec;
use crate::error::{GeometryError, Result};
use crate::image::{BitDepth, Image};
use crate::mesh::{TriMesh, Uv};
use crate::texel::{texel_id, wrap_uv, TexelSet};
use crate::vec3::Vec3;

/// Triangles with a vertex closer than this to the camera plane are skipped.
pub const NEAR: f64 = 1e-4;
pub const DEFAULT_GRAZING_CUTOFF: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Fragment {
    pub tri: u32,
    /// Perspective-correct barycentric weights of the triangle's corners.
    pub bary: [f64; 3],
    /// Euclidean distance from the camera origin.
    pub depth: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RasterDiagnostics {
    pub degenerate: usize,
    pub backfacing: usize,
    pub near_clipped: usize,
    pub uv_wrapped: usize,
}

#[derive(Clone, Debug)]
pub struct FragmentBuffer {
    pub width: usize,
    pub height: usize,
    pub frags: Vec<Option<Fragment>>,
    pub diagnostics: RasterDiagnostics,
}

impl FragmentBuffer {
    pub fn get(&self, x: usize, y: usize) -> Option<&Fragment> {
        self.frags[y * self.width + x].as_ref()
    }

    pub fn covered(&self) -> usize {
        self.frags.iter().filter(|f| f.is_some()).count()
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Rasterize front-facing triangles; a pixel is covered when its center lies
/// inside the projected triangle (edges inclusive) and the fragment is
/// strictly nearer than what is already stored.
pub fn rasterize_fragments(mesh: &TriMesh, view: &ViewSpec) -> FragmentBuffer {
    let (w, h) = (view.width, view.height);
    let mut buf = FragmentBuffer {
        width: w,
        height: h,
        frags: vec![None; w * h],
        diagnostics: RasterDiagnostics::default(),
    };
    let origin = view.origin();
    for t in 0..mesh.triangle_count() {
        let world = mesh.corners(t);
        let n = mesh.face_normal_raw(t);
        let scale = (world[1] - world[0]).length() * (world[2] - world[0]).length();
        if n.length() <= 1e-12 * scale || scale == 0.0 {
            buf.diagnostics.degenerate += 1;
            continue;
        }
        if n.dot(world[0] - origin) >= 0.0 {
            buf.diagnostics.backfacing += 1;
            continue;
        }
        let cam = world.map(|p| view.world_to_camera(p));
        if cam.iter().any(|c| c.z > -NEAR) {
            buf.diagnostics.near_clipped += 1;
            continue;
        }
        let scr = cam.map(|c| view.project_camera(c));
        let inv_w = cam.map(|c| 1.0 / -c.z);
        let area = edge(scr[0], scr[1], scr[2]);
        if area == 0.0 {
            continue;
        }
        let minx = scr.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
        let maxx = scr.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let miny = scr.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let maxy = scr.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let x0 = (minx - 0.5).ceil().max(0.0);
        let y0 = (miny - 0.5).ceil().max(0.0);
        let x1 = (maxx - 0.5).floor().min(w as f64 - 1.0);
        let y1 = (maxy - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for py in y0 as usize..=y1 as usize {
            for px in x0 as usize..=x1 as usize {
                let p = (px as f64 + 0.5, py as f64 + 0.5);
                let b = [edge(scr[1], scr[2], p) / area, edge(scr[2], scr[0], p) / area, edge(scr[0], scr[1], p) / area];
                if b.iter().any(|&v| v < 0.0) {
                    continue;
                }
                let pw = [b[0] * inv_w[0], b[1] * inv_w[1], b[2] * inv_w[2]];
                let s = pw[0] + pw[1] + pw[2];
                let bary = [pw[0] / s, pw[1] / s, pw[2] / s];
                let pc = cam[0] * bary[0] + cam[1] * bary[1] + cam[2] * bary[2];
                let depth = pc.length();
                let slot = &mut buf.frags[py * w + px];
                if slot.map_or(true, |f| depth < f.depth) {
                    *slot = Some(Fragment {
                        tri: t as u32,
                        bary,
                        depth,
                    });
                }
            }
        }
    }
    buf
}

fn interp<T: Copy>(v: [T; 3], b: [f64; 3], mut f: impl FnMut(T, f64) -> Vec3) -> Vec3 {
    f(v[0], b[0]) + f(v[1], b[1]) + f(v[2], b[2])
}

/// Interpolated UV of a fragment (not wrapped).
pub fn fragment_uv(mesh: &TriMesh, f: &Fragment) -> Uv {
    let uv = mesh.corner_uvs[f.tri as usize];
    let b = f.bary;
    [
        uv[0][0] * b[0] + uv[1][0] * b[1] + uv[2][0] * b[2],
        uv[0][1] * b[0] + uv[1][1] * b[1] + uv[2][1] * b[2],
    ]
}

/// Unit shading normal: interpolated corner normals when present, otherwise
/// the geometric face normal.
pub fn fragment_normal(mesh: &TriMesh, f: &Fragment) -> Vec3 {
    match &mesh.corner_normals {
        Some(ns) => interp(ns[f.tri as usize], f.bary, |n, w| n * w).normalized(),
        None => mesh.face_normal_raw(f.tri as usize).normalized(),
    }
}

pub fn fragment_position(mesh: &TriMesh, f: &Fragment) -> Vec3 {
    interp(mesh.corners(f.tri as usize), f.bary, |p, w| p * w)
}

/// Per-view geometry conditions. Normal and canonical maps are remapped to
/// `[0, 1]`; the Plücker map stores raw `d` and `m`.
#[derive(Clone, Debug)]
pub struct GeoMaps {
    pub normal: Image,
    pub canonical: Image,
    pub plucker: Image,
    pub depth: Image,
    pub mask: Image,
    pub diagnostics: RasterDiagnostics,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct GeoSidecar {
    width: usize,
    height: usize,
    depth_scale: f64,
    moment_scale: f64,
    diagnostics: RasterDiagnostics,
}

impl GeoMaps {
    pub fn width(&self) -> usize {
        self.mask.width
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn is_covered(&self, x: usize, y: usize) -> bool {
        self.mask.pixel(x, y)[0] > 0.5
    }

    /// Normal then canonical, six channels.
    pub fn geometry6(&self) -> Image {
        Image::concat_channels(&[&self.normal, &self.canonical]).expect("maps share a resolution")
    }

    /// Writes `<stem>_{normal,canonical,plucker_d,plucker_m,depth}.png` as
    /// 16-bit PNGs, `<stem>_mask.png` as 8-bit, and `<stem>_geo.json` holding
    /// the scales used to bring depth into `[0, 1]` (`depth / depth_scale`)
    /// and the Plücker map (`(d + 1) / 2`, `m / (2 moment_scale) + 1/2`).
    pub fn save_pngs(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let depth_scale = self.depth.data.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
        let d = self.plucker.select_channels(0, 3);
        let m = self.plucker.select_channels(3, 3);
        let moment_scale = m.data.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-12);
        let sixteen = [
            ("normal", self.normal.clone()),
            ("canonical", self.canonical.clone()),
            ("plucker_d", d.map(|v| (v + 1.0) * 0.5)),
            ("plucker_m", m.map(|v| v / (2.0 * moment_scale) + 0.5)),
            ("depth", self.depth.map(|v| v / depth_scale)),
        ];
        for (name, img) in &sixteen {
            img.save_png(dir.join(format!("{stem}_{name}.png")), BitDepth::Sixteen)?;
        }
        self.mask.save_png(dir.join(format!("{stem}_mask.png")), BitDepth::Eight)?;
        let side = GeoSidecar {
            width: self.width(),
            height: self.height(),
            depth_scale,
            moment_scale,
            diagnostics: self.diagnostics,
        };
        let p = dir.join(format!("{stem}_geo.json"));
        std::fs::write(&p, serde_json::to_string_pretty(&side)?).map_err(|e| GeometryError::io(&p, e))
    }

    pub fn load_pngs(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join(format!("{stem}_geo.json"));
        let side: GeoSidecar = serde_json::from_str(&std::fs::read_to_string(&p).map_err(|e| GeometryError::io(&p, e))?)?;
        let load = |name: &str| Image::load_png(dir.join(format!("{stem}_{name}.png")));
        let mask = load("mask")?.map(|v| if v > 0.5 { 1.0 } else { 0.0 });
        let d = load("plucker_d")?.map(|v| 2.0 * v - 1.0);
        let m = load("plucker_m")?.map(|v| (v - 0.5) * 2.0 * side.moment_scale);
        Ok(Self {
            normal: load("normal")?,
            canonical: load("canonical")?,
            plucker: Image::concat_channels(&[&d, &m])?,
            depth: load("depth")?.map(|v| v * side.depth_scale),
            mask,
            diagnostics: side.diagnostics,
        })
    }
}

pub fn geo_maps_from_fragments(mesh: &TriMesh, view: &ViewSpec, buf: &FragmentBuffer) -> GeoMaps {
    let (w, h) = (view.width, view.height);
    let mut normal = Image::new(w, h, 3);
    let mut canonical = Image::new(w, h, 3);
    let mut depth = Image::new(w, h, 1);
    let mut mask = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let Some(f) = buf.get(x, y) else { continue };
            let n = fragment_normal(mesh, f);
            let p = fragment_position(mesh, f);
            normal.pixel_mut(x, y).copy_from_slice(&[(n.x + 1.0) * 0.5, (n.y + 1.0) * 0.5, (n.z + 1.0) * 0.5]);
            canonical.pixel_mut(x, y).copy_from_slice(&[(p.x + 1.0) * 0.5, (p.y + 1.0) * 0.5, (p.z + 1.0) * 0.5]);
            depth.pixel_mut(x, y)[0] = f.depth;
            mask.pixel_mut(x, y)[0] = 1.0;
        }
    }
    GeoMaps {
        normal,
        canonical,
        plucker: view.plucker_map(),
        depth,
        mask,
        diagnostics: buf.diagnostics,
    }
}

pub fn rasterize(mesh: &TriMesh, view: &ViewSpec) -> GeoMaps {
    let buf = rasterize_fragments(mesh, view);
    geo_maps_from_fragments(mesh, view, &buf)
}

/// Per-pixel atlas texel ids (`None` outside the mask).
#[derive(Clone, Debug)]
pub struct UvIdMap {
    pub width: usize,
    pub height: usize,
    pub atlas_res: usize,
    pub ids: Vec<Option<u32>>,
    pub diagnostics: RasterDiagnostics,
}

impl UvIdMap {
    pub fn get(&self, x: usize, y: usize) -> Option<u32> {
        self.ids[y * self.width + x]
    }

    pub fn is_empty(&self) -> bool {
        self.ids.iter().all(Option::is_none)
    }
}

pub fn uv_ids_from_fragments(mesh: &TriMesh, buf: &FragmentBuffer, atlas_res: usize) -> UvIdMap {
    let mut diagnostics = buf.diagnostics;
    let ids = buf
        .frags
        .iter()
        .map(|f| {
            f.as_ref().map(|f| {
                let (uv, wrapped) = wrap_uv(fragment_uv(mesh, f));
                diagnostics.uv_wrapped += wrapped as usize;
                texel_id(uv, atlas_res)
            })
        })
        .collect();
    UvIdMap {
        width: buf.width,
        height: buf.height,
        atlas_res,
        ids,
        diagnostics,
    }
}

pub fn rasterize_uv_ids(mesh: &TriMesh, view: &ViewSpec, atlas_res: usize) -> UvIdMap {
    uv_ids_from_fragments(mesh, &rasterize_fragments(mesh, view), atlas_res)
}

/// `|n . d|` between the geometric face normal and the pixel ray.
pub fn frontality(mesh: &TriMesh, view: &ViewSpec, x: usize, y: usize, f: &Fragment) -> f64 {
    mesh.face_normal_raw(f.tri as usize).normalized().dot(view.ray_dir(x, y)).abs()
}

pub fn visible_texels_from_fragments(mesh: &TriMesh, view: &ViewSpec, buf: &FragmentBuffer, atlas_res: usize, cutoff: f64) -> TexelSet {
    let mut set = TexelSet::new(atlas_res);
    for y in 0..buf.height {
        for x in 0..buf.width {
            let Some(f) = buf.get(x, y) else { continue };
            if frontality(mesh, view, x, y, f) < cutoff {
                continue;
            }
            let (uv, _) = wrap_uv(fragment_uv(mesh, f));
            set.insert(texel_id(uv, atlas_res) as usize);
        }
    }
    set
}

/// Texels seen by at least one pixel whose surface is at least `cutoff`
/// frontal.
pub fn visible_texels_with(mesh: &TriMesh, view: &ViewSpec, atlas_res: usize, cutoff: f64) -> TexelSet {
    visible_texels_from_fragments(mesh, view, &rasterize_fragments(mesh, view), atlas_res, cutoff)
}

pub fn visible_texels(mesh: &TriMesh, view: &ViewSpec, atlas_res: usize) -> TexelSet {
    visible_texels_with(mesh, view, atlas_res, DEFAULT_GRAZING_CUTOFF)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh;
    use crate::vec3::Vec3;

    fn front_view(res: usize) -> ViewSpec {
        ViewSpec::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.8, res, res, 0).unwrap()
    }

    #[test]
    fn empty_mesh_leaves_mask_empty() {
        let g = rasterize(&TriMesh::empty(), &front_view(16));
        assert!(g.mask.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_triangles_are_counted() {
        let m = TriMesh::new(
            vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)],
            vec![[0, 1, 2]],
            vec![[[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]]],
        )
        .unwrap();
        let g = rasterize(&m, &front_view(16));
        assert_eq!(g.diagnostics.degenerate, 1);
        assert!(g.mask.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uv_wrapping_is_counted() {
        let mut m = mesh::quad(1.0);
        for uvs in &mut m.corner_uvs {
            for uv in uvs.iter_mut() {
                uv[0] += 1.5;
            }
        }
        let ids = rasterize_uv_ids(&m, &front_view(16), 8);
        assert!(ids.diagnostics.uv_wrapped > 0);
        assert!(ids.ids.iter().flatten().all(|&i| i < 64));
    }

    #[test]
    fn rasterization_is_deterministic() {
        let m = mesh::icosphere(1);
        let v = front_view(24);
        let (a, b) = (rasterize(&m, &v), rasterize(&m, &v));
        assert_eq!(a.normal, b.normal);
        assert_eq!(a.depth, b.depth);
        assert_eq!(a.canonical, b.canonical);
    }
}
