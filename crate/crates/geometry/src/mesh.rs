//! Triangle meshes with per-corner UVs, Wavefront OBJ I/O and the procedural
//! primitives used by the toy dataset.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{GeometryError, Result};
use crate::vec3::Vec3;

pub type Uv = [f64; 2];

#[derive(Clone, Debug, PartialEq)]
pub struct TriMesh {
    pub positions: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub corner_uvs: Vec<[Uv; 3]>,
    /// Optional shading normals, one per triangle corner.
    pub corner_normals: Option<Vec<[Vec3; 3]>>,
}

impl TriMesh {
    pub fn new(positions: Vec<Vec3>, triangles: Vec<[u32; 3]>, corner_uvs: Vec<[Uv; 3]>) -> Result<Self> {
        let m = Self {
            positions,
            triangles,
            corner_uvs,
            corner_normals: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            triangles: Vec::new(),
            corner_uvs: Vec::new(),
            corner_normals: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.corner_uvs.len() != self.triangles.len() {
            return Err(GeometryError::InvalidMesh(format!(
                "{} triangles but {} UV triples",
                self.triangles.len(),
                self.corner_uvs.len()
            )));
        }
        if let Some(n) = &self.corner_normals {
            if n.len() != self.triangles.len() {
                return Err(GeometryError::InvalidMesh("normal triple count mismatch".into()));
            }
        }
        let nv = self.positions.len() as u32;
        if let Some((t, _)) = self.triangles.iter().enumerate().find(|(_, tri)| tri.iter().any(|&i| i >= nv)) {
            return Err(GeometryError::InvalidMesh(format!("triangle {t} indexes past {nv} vertices")));
        }
        if self.positions.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
            return Err(GeometryError::InvalidMesh("non-finite vertex position".into()));
        }
        Ok(())
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.positions[a as usize], self.positions[b as usize], self.positions[c as usize]]
    }

    /// Unnormalized geometric normal `(p1 - p0) x (p2 - p0)`; counter-clockwise
    /// corners face the viewer.
    pub fn face_normal_raw(&self, t: usize) -> Vec3 {
        let [p0, p1, p2] = self.corners(t);
        (p1 - p0).cross(p2 - p0)
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let first = *self.positions.first()?;
        let (mut lo, mut hi) = (first, first);
        for p in &self.positions {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        Some((lo, hi))
    }

    /// Center the bounding box on the origin and scale uniformly so the mesh
    /// fits `[-1, 1]^3` with its largest half-extent equal to 1.
    pub fn normalize(&mut self) {
        let Some((lo, hi)) = self.bounds() else { return };
        let center = (lo + hi) * 0.5;
        let half = ((hi - lo) * 0.5).max_abs();
        let s = if half > 0.0 { 1.0 / half } else { 1.0 };
        for p in &mut self.positions {
            *p = (*p - center) * s;
        }
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| GeometryError::io(path, e))?;
        let mut mesh = parse_obj(&text, &path.display().to_string())?;
        mesh.normalize();
        Ok(mesh)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for p in &self.positions {
            let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
        }
        for uvs in &self.corner_uvs {
            for uv in uvs {
                let _ = writeln!(s, "vt {} {}", uv[0], uv[1]);
            }
        }
        if let Some(normals) = &self.corner_normals {
            for ns in normals {
                for n in ns {
                    let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
                }
            }
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            s.push('f');
            for (c, &v) in tri.iter().enumerate() {
                let vt = 3 * t + c + 1;
                if self.corner_normals.is_some() {
                    let _ = write!(s, " {}/{}/{}", v + 1, vt, vt);
                } else {
                    let _ = write!(s, " {}/{}", v + 1, vt);
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_obj()).map_err(|e| GeometryError::io(path, e))
    }
}

fn parse_index(tok: &str, count: usize, line: usize) -> Result<usize> {
    let i: i64 = tok.parse().map_err(|_| GeometryError::Obj {
        line,
        msg: format!("bad index {tok:?}"),
    })?;
    let resolved = if i > 0 { i - 1 } else { count as i64 + i };
    if resolved < 0 || resolved as usize >= count {
        return Err(GeometryError::Obj {
            line,
            msg: format!("index {i} out of range (have {count})"),
        });
    }
    Ok(resolved as usize)
}

fn parse_floats<const N: usize>(parts: &[&str], line: usize) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (i, o) in out.iter_mut().enumerate() {
        let tok = parts.get(i).ok_or_else(|| GeometryError::Obj {
            line,
            msg: format!("expected {N} numbers"),
        })?;
        *o = tok.parse().map_err(|_| GeometryError::Obj {
            line,
            msg: format!("bad number {tok:?}"),
        })?;
    }
    Ok(out)
}

/// Parse OBJ text without normalizing. Polygons are fan-triangulated.
pub fn parse_obj(text: &str, source: &str) -> Result<TriMesh> {
    let mut positions = Vec::new();
    let mut uvs: Vec<Uv> = Vec::new();
    let mut normals: Vec<Vec3> = Vec::new();
    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    let mut corner_normals: Vec<[Vec3; 3]> = Vec::new();
    let mut all_have_normals = true;
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut parts = content.split_whitespace();
        let Some(tag) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        match tag {
            "v" => positions.push(Vec3::from(parse_floats::<3>(&rest, line)?)),
            "vt" => {
                let [u, v] = parse_floats::<2>(&rest, line)?;
                uvs.push([u, v]);
            }
            "vn" => normals.push(Vec3::from(parse_floats::<3>(&rest, line)?)),
            "f" => {
                if rest.len() < 3 {
                    return Err(GeometryError::Obj {
                        line,
                        msg: "face with fewer than 3 vertices".into(),
                    });
                }
                let mut corners = Vec::with_capacity(rest.len());
                for tok in &rest {
                    let mut fields = tok.split('/');
                    let v = parse_index(fields.next().unwrap_or(""), positions.len(), line)?;
                    let vt = match fields.next() {
                        Some(s) if !s.is_empty() => parse_index(s, uvs.len(), line)?,
                        _ => return Err(GeometryError::NoUvAtlas(format!("{source}: face at line {line} has no vt index"))),
                    };
                    let vn = match fields.next() {
                        Some(s) if !s.is_empty() => Some(parse_index(s, normals.len(), line)?),
                        _ => None,
                    };
                    corners.push((v, vt, vn));
                }
                for k in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[k], corners[k + 1]];
                    triangles.push(tri.map(|c| c.0 as u32));
                    corner_uvs.push(tri.map(|c| uvs[c.1]));
                    match (tri[0].2, tri[1].2, tri[2].2) {
                        (Some(a), Some(b), Some(c)) => corner_normals.push([normals[a], normals[b], normals[c]]),
                        _ => all_have_normals = false,
                    }
                }
            }
            _ => {}
        }
    }
    if uvs.is_empty() && !triangles.is_empty() {
        return Err(GeometryError::NoUvAtlas(source.to_string()));
    }
    let mut mesh = TriMesh {
        positions,
        triangles,
        corner_uvs,
        corner_normals: None,
    };
    if all_have_normals && !corner_normals.is_empty() {
        mesh.corner_normals = Some(corner_normals.into_iter().map(|ns| ns.map(Vec3::normalized)).collect());
    }
    mesh.validate()?;
    Ok(mesh)
}

/// Axis-aligned cube `[-1, 1]^3`, two triangles per face, each face mapped
/// to its own cell of a 4x2 UV grid (two cells unused) with a 1/32 margin.
pub fn cube() -> TriMesh {
    let positions: Vec<Vec3> = (0..8)
        .map(|i| {
            Vec3::new(
                if i & 1 != 0 { 1.0 } else { -1.0 },
                if i & 2 != 0 { 1.0 } else { -1.0 },
                if i & 4 != 0 { 1.0 } else { -1.0 },
            )
        })
        .collect();
    // Corner cycles are counter-clockwise seen from outside.
    let faces: [[u32; 4]; 6] = [
        [1, 3, 7, 5], // +x
        [4, 6, 2, 0], // -x
        [2, 6, 7, 3], // +y
        [4, 0, 1, 5], // -y
        [5, 7, 6, 4], // +z
        [0, 2, 3, 1], // -z
    ];
    let margin = 1.0 / 32.0;
    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    for (f, q) in faces.iter().enumerate() {
        let (cu, cv) = ((f % 4) as f64 * 0.25, (f / 4) as f64 * 0.5);
        let (u0, u1) = (cu + margin, cu + 0.25 - margin);
        let (v0, v1) = (cv + margin, cv + 0.5 - margin);
        let uv = [[u0, v0], [u1, v0], [u1, v1], [u0, v1]];
        triangles.push([q[0], q[1], q[2]]);
        corner_uvs.push([uv[0], uv[1], uv[2]]);
        triangles.push([q[0], q[2], q[3]]);
        corner_uvs.push([uv[0], uv[2], uv[3]]);
    }
    TriMesh {
        positions,
        triangles,
        corner_uvs,
        corner_normals: None,
    }
}

/// Unit quad in the `z = 0` plane facing `+z`, identity UV mapping.
pub fn quad(half: f64) -> TriMesh {
    let positions = vec![
        Vec3::new(-half, -half, 0.0),
        Vec3::new(half, -half, 0.0),
        Vec3::new(half, half, 0.0),
        Vec3::new(-half, half, 0.0),
    ];
    TriMesh {
        positions,
        triangles: vec![[0, 1, 2], [0, 2, 3]],
        corner_uvs: vec![[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0], [0.0, 1.0]]],
        corner_normals: None,
    }
}

/// Icosphere of radius 1 built by `subdiv` rounds of midpoint subdivision.
///
/// UVs pack each triangle into its own half-cell of a square grid, the
/// fragmented kind of atlas automatic unwrappers produce.
pub fn icosphere(subdiv: usize) -> TriMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut positions: Vec<Vec3> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
    .collect();
    let mut tris: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdiv {
        let mut cache = std::collections::HashMap::new();
        let mut midpoint = |a: u32, b: u32, positions: &mut Vec<Vec3>| -> u32 {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let m = ((positions[a as usize] + positions[b as usize]) * 0.5).normalized();
                positions.push(m);
                (positions.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for &[a, b, c] in &tris {
            let ab = midpoint(a, b, &mut positions);
            let bc = midpoint(b, c, &mut positions);
            let ca = midpoint(c, a, &mut positions);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    let corner_uvs = packed_triangle_uvs(tris.len());
    TriMesh {
        positions,
        triangles: tris,
        corner_uvs,
        corner_normals: None,
    }
}

/// Per-triangle UV charts: two triangles per square cell, inset so that no
/// two charts touch.
pub fn packed_triangle_uvs(count: usize) -> Vec<[Uv; 3]> {
    let cells = count.div_ceil(2).max(1);
    let grid = (cells as f64).sqrt().ceil() as usize;
    let size = 1.0 / grid as f64;
    let m = 0.08 * size;
    (0..count)
        .map(|t| {
            let cell = t / 2;
            let (cx, cy) = ((cell % grid) as f64 * size, (cell / grid) as f64 * size);
            let uv = |a: f64, b: f64| [cx + a * size, cy + b * size];
            let (lo, hi) = (m / size, 1.0 - 2.0 * m / size);
            if t % 2 == 0 {
                [uv(lo, lo), uv(hi, lo), uv(lo, hi)]
            } else {
                let (lo2, hi2) = (2.0 * m / size, 1.0 - m / size);
                [uv(hi2, hi2), uv(lo2, hi2), uv(hi2, lo2)]
            }
        })
        .collect()
}

/// Closed cylinder along `y` with radius 1 and height 2. The side wraps the
/// lower half of the atlas; the caps are disks in the upper half.
pub fn cylinder(segments: usize) -> TriMesh {
    let segments = segments.max(3);
    let mut positions = Vec::new();
    for ring in [-1.0, 1.0] {
        for s in 0..segments {
            let a = std::f64::consts::TAU * s as f64 / segments as f64;
            positions.push(Vec3::new(a.cos(), ring, -a.sin()));
        }
    }
    let bottom_c = positions.len() as u32;
    positions.push(Vec3::new(0.0, -1.0, 0.0));
    let top_c = positions.len() as u32;
    positions.push(Vec3::new(0.0, 1.0, 0.0));
    let n = segments as u32;
    let margin = 1.0 / 64.0;
    let mut triangles = Vec::new();
    let mut corner_uvs = Vec::new();
    let side_u = |s: u32| margin + (1.0 - 2.0 * margin) * s as f64 / segments as f64;
    let (v0, v1) = (margin, 0.5 - margin);
    for s in 0..n {
        let s1 = (s + 1) % n;
        let (b0, b1, t0, t1) = (s, s1, n + s, n + s1);
        let (ua, ub) = (side_u(s), side_u(s + 1));
        triangles.push([b0, b1, t1]);
        corner_uvs.push([[ua, v0], [ub, v0], [ub, v1]]);
        triangles.push([b0, t1, t0]);
        corner_uvs.push([[ua, v0], [ub, v1], [ua, v1]]);
    }
    let cap_uv = |center: [f64; 2], p: Vec3| {
        let r = 0.25 - margin;
        [center[0] + r * p.x, center[1] - r * p.z]
    };
    let (bc, tc) = ([0.25, 0.75], [0.75, 0.75]);
    for s in 0..n {
        let s1 = (s + 1) % n;
        let (pb0, pb1) = (positions[s as usize], positions[s1 as usize]);
        triangles.push([bottom_c, s1, s]);
        corner_uvs.push([bc, cap_uv(bc, pb1), cap_uv(bc, pb0)]);
        let (pt0, pt1) = (positions[(n + s) as usize], positions[(n + s1) as usize]);
        triangles.push([top_c, n + s, n + s1]);
        corner_uvs.push([tc, cap_uv(tc, pt0), cap_uv(tc, pt1)]);
    }
    TriMesh {
        positions,
        triangles,
        corner_uvs,
        corner_normals: None,
    }
}
