//! Cook-Torrance microfacet BRDF: GGX distribution, separable Smith
//! masking-shadowing and Schlick Fresnel, over a Lambertian base.

use std::f64::consts::PI;

use lumitex_bake::Material;
use lumitex_geometry::Vec3;

pub const MIN_ROUGHNESS: f64 = 0.04;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PbrSample {
    pub albedo: [f64; 3],
    pub metallic: f64,
    pub roughness: f64,
}

impl PbrSample {
    /// Clamps every channel into `[0, 1]` and roughness below at 0.04.
    pub fn new(albedo: [f64; 3], metallic: f64, roughness: f64) -> Self {
        Self {
            albedo: albedo.map(|a| a.clamp(0.0, 1.0)),
            metallic: metallic.clamp(0.0, 1.0),
            roughness: roughness.clamp(MIN_ROUGHNESS, 1.0),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.roughness * self.roughness
    }

    pub fn f0(&self) -> [f64; 3] {
        self.albedo.map(|a| 0.04 + (a - 0.04) * self.metallic)
    }
}

impl From<Material> for PbrSample {
    fn from(m: Material) -> Self {
        Self::new(m.albedo, m.metallic, m.roughness)
    }
}

pub fn ggx_d(n_h: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let d = n_h * n_h * (a2 - 1.0) + 1.0;
    a2 / (PI * d * d)
}

pub fn smith_g1(n_x: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    2.0 * n_x / (n_x + (a2 + (1.0 - a2) * n_x * n_x).sqrt())
}

pub fn schlick(f0: f64, v_h: f64) -> f64 {
    f0 + (1.0 - f0) * (1.0 - v_h).clamp(0.0, 1.0).powi(5)
}

pub fn diffuse(mat: &PbrSample) -> [f64; 3] {
    mat.albedo.map(|a| (1.0 - mat.metallic) * a / PI)
}

/// Specular lobe `D F G / (4 (n.l)(n.v))`; zero when either cosine is not
/// positive.
pub fn specular(n: Vec3, l: Vec3, v: Vec3, mat: &PbrSample) -> [f64; 3] {
    let (nl, nv) = (n.dot(l), n.dot(v));
    if nl <= 0.0 || nv <= 0.0 {
        return [0.0; 3];
    }
    let h = (l + v).normalized();
    let alpha = mat.alpha();
    let d = ggx_d(n.dot(h).max(0.0), alpha);
    let g = smith_g1(nl, alpha) * smith_g1(nv, alpha);
    // v.h and l.h are equal in exact arithmetic; averaging them (and
    // grouping the cosines) keeps swapped arguments bit-identical.
    let vh = 0.5 * (v.dot(h) + l.dot(h));
    let denom = 4.0 * (nl * nv);
    mat.f0().map(|f0| d * schlick(f0, vh) * g / denom)
}

/// Reflectance for unit `n`, `l` (toward the light) and `v` (toward the
/// viewer).
pub fn ggx_brdf(n: Vec3, l: Vec3, v: Vec3, mat: &PbrSample) -> [f64; 3] {
    if n.dot(l) <= 0.0 || n.dot(v) <= 0.0 {
        return [0.0; 3];
    }
    let d = diffuse(mat);
    let s = specular(n, l, v, mat);
    [d[0] + s[0], d[1] + s[1], d[2] + s[2]]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn below_horizon_is_black() {
        let m = PbrSample::new([0.5; 3], 0.0, 0.5);
        let n = Vec3::new(0.0, 0.0, 1.0);
        assert_eq!(ggx_brdf(n, Vec3::new(0.0, 0.0, -1.0), n, &m), [0.0; 3]);
        assert_eq!(ggx_brdf(n, n, Vec3::new(1.0, 0.0, 0.0), &m), [0.0; 3]);
    }

    #[test]
    fn roughness_floor() {
        assert_eq!(PbrSample::new([0.0; 3], 0.0, 0.0).roughness, MIN_ROUGHNESS);
    }

    #[test]
    fn ggx_normalizes_projected_area() {
        // Integral of D(h) (n.h) over the hemisphere is 1.
        for alpha in [0.1, 0.5, 1.0] {
            let steps = 4000;
            let mut s = 0.0;
            for i in 0..steps {
                let theta = (i as f64 + 0.5) / steps as f64 * PI / 2.0;
                let c = theta.cos();
                s += ggx_d(c, alpha) * c * theta.sin() * 2.0 * PI * (PI / 2.0 / steps as f64);
            }
            assert!((s - 1.0).abs() < 1e-3, "alpha {alpha}: {s}");
        }
    }
}
