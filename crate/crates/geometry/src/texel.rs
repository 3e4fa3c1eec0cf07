//! Atlas texel addressing, texel bitsets and UV occupancy.
//!
//! Texel `(x, y)` of an `R x R` atlas covers `u in [x/R, (x+1)/R)` and
//! `1 - v in [y/R, (y+1)/R)`, so row 0 is the top of the atlas image (high
//! `v`). Its id is `y * R + x`.

use std::path::Path;

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GeometryError, Result};
use crate::mesh::{TriMesh, Uv};

/// Texel coordinates of a UV point in `[0, 1]^2`; the upper edges map to the
/// last texel.
pub fn texel_xy(uv: Uv, res: usize) -> (usize, usize) {
    let r = res as f64;
    let x = ((uv[0] * r).floor().max(0.0) as usize).min(res - 1);
    let y = (((1.0 - uv[1]) * r).floor().max(0.0) as usize).min(res - 1);
    (x, y)
}

pub fn texel_id(uv: Uv, res: usize) -> u32 {
    let (x, y) = texel_xy(uv, res);
    (y * res + x) as u32
}

/// UV at the center of texel `(x, y)`.
pub fn texel_center(x: usize, y: usize, res: usize) -> Uv {
    let r = res as f64;
    [(x as f64 + 0.5) / r, 1.0 - (y as f64 + 0.5) / r]
}

/// Repeat addressing. Returns the wrapped UV and whether wrapping happened.
pub fn wrap_uv(uv: Uv) -> (Uv, bool) {
    let inside = |c: f64| (0.0..=1.0).contains(&c);
    if inside(uv[0]) && inside(uv[1]) {
        (uv, false)
    } else {
        let w = |c: f64| if inside(c) { c } else { c - c.floor() };
        ([w(uv[0]), w(uv[1])], true)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TexelSet {
    res: usize,
    bits: BitVec<u8, Lsb0>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TexelSetSidecar {
    pub atlas_res: usize,
    pub count: usize,
}

impl TexelSet {
    pub fn new(res: usize) -> Self {
        Self {
            res,
            bits: bitvec![u8, Lsb0; 0; res * res],
        }
    }

    pub fn full(res: usize) -> Self {
        Self {
            res,
            bits: bitvec![u8, Lsb0; 1; res * res],
        }
    }

    pub fn res(&self) -> usize {
        self.res
    }

    pub fn len(&self) -> usize {
        self.res * self.res
    }

    pub fn is_empty(&self) -> bool {
        self.bits.not_any()
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones()
    }

    pub fn insert(&mut self, id: usize) {
        self.bits.set(id, true);
    }

    pub fn remove(&mut self, id: usize) {
        self.bits.set(id, false);
    }

    pub fn contains(&self, id: usize) -> bool {
        self.bits[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter_ones()
    }

    pub fn union_with(&mut self, other: &TexelSet) {
        assert_eq!(self.res, other.res, "atlas resolution mismatch");
        self.bits |= other.bits.as_bitslice();
    }

    pub fn intersect_with(&mut self, other: &TexelSet) {
        assert_eq!(self.res, other.res, "atlas resolution mismatch");
        self.bits &= other.bits.as_bitslice();
    }

    /// `|self \ other|`
    pub fn difference_count(&self, other: &TexelSet) -> usize {
        assert_eq!(self.res, other.res, "atlas resolution mismatch");
        self.bits.iter_ones().filter(|&i| !other.bits[i]).count()
    }

    pub fn is_subset(&self, other: &TexelSet) -> bool {
        self.difference_count(other) == 0
    }

    /// Raw bitmap: bit `j` of byte `i` is texel `8 i + j`.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.bits.as_raw_slice().to_vec()
    }

    pub fn from_bytes(res: usize, bytes: &[u8]) -> Result<Self> {
        let n = res * res;
        if bytes.len() != n.div_ceil(8) {
            return Err(GeometryError::Image(format!(
                "texel bitmap has {} bytes, expected {} for a {res}x{res} atlas",
                bytes.len(),
                n.div_ceil(8)
            )));
        }
        let mut bits = BitVec::<u8, Lsb0>::from_slice(bytes);
        bits.truncate(n);
        Ok(Self { res, bits })
    }

    /// Writes `<path>` (raw bitmap) and `<path>.json` (`{atlas_res, count}`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| GeometryError::io(path, e))?;
        let sidecar = sidecar_path(path);
        let meta = TexelSetSidecar {
            atlas_res: self.res,
            count: self.count(),
        };
        std::fs::write(&sidecar, serde_json::to_string_pretty(&meta)?).map_err(|e| GeometryError::io(&sidecar, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar = sidecar_path(path);
        let meta: TexelSetSidecar = serde_json::from_str(
            &std::fs::read_to_string(&sidecar).map_err(|e| GeometryError::io(&sidecar, e))?,
        )?;
        let bytes = std::fs::read(path).map_err(|e| GeometryError::io(path, e))?;
        let set = Self::from_bytes(meta.atlas_res, &bytes)?;
        if set.count() != meta.count {
            return Err(GeometryError::Image(format!(
                "{}: sidecar count {} but bitmap holds {}",
                path.display(),
                meta.count,
                set.count()
            )));
        }
        Ok(set)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

/// Texels whose open square overlaps the open interior of some UV triangle
/// (conservative rasterization with strict overlap, by separating axes).
/// Texels that only touch a chart along an edge or corner are not occupied.
pub fn occupancy(mesh: &TriMesh, res: usize) -> TexelSet {
    let mut set = TexelSet::new(res);
    let r = res as f64;
    for uvs in &mesh.corner_uvs {
        let pts: Vec<(f64, f64)> = uvs.iter().map(|uv| (uv[0] * r, (1.0 - uv[1]) * r)).collect();
        let area = (pts[1].0 - pts[0].0) * (pts[2].1 - pts[0].1) - (pts[1].1 - pts[0].1) * (pts[2].0 - pts[0].0);
        if area.abs() < 1e-12 {
            continue;
        }
        let (minx, maxx) = minmax(pts.iter().map(|p| p.0));
        let (miny, maxy) = minmax(pts.iter().map(|p| p.1));
        let x0 = (minx.floor().max(0.0) as usize).min(res - 1);
        let x1 = (maxx.ceil().max(0.0) as usize).min(res);
        let y0 = (miny.floor().max(0.0) as usize).min(res - 1);
        let y1 = (maxy.ceil().max(0.0) as usize).min(res);
        for y in y0..y1 {
            for x in x0..x1 {
                if square_overlaps_triangle(x as f64, y as f64, &pts) {
                    set.insert(y * res + x);
                }
            }
        }
    }
    set
}

fn minmax(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn square_overlaps_triangle(x: f64, y: f64, tri: &[(f64, f64)]) -> bool {
    let square = [(x, y), (x + 1.0, y), (x + 1.0, y + 1.0), (x, y + 1.0)];
    let mut axes = vec![(1.0, 0.0), (0.0, 1.0)];
    for i in 0..3 {
        let (a, b) = (tri[i], tri[(i + 1) % 3]);
        axes.push((-(b.1 - a.1), b.0 - a.0));
    }
    axes.iter().all(|&(ax, ay)| {
        let (s0, s1) = minmax(square.iter().map(|p| p.0 * ax + p.1 * ay));
        let (t0, t1) = minmax(tri.iter().map(|p| p.0 * ax + p.1 * ay));
        let scale = ax.abs() + ay.abs();
        s1.min(t1) - s0.max(t0) > 1e-12 * scale
    })
}
