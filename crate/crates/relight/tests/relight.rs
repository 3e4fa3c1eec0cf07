use std::f64::consts::PI;

use lumitex_bake::{Material, TextureAtlas};
use lumitex_geometry::texel::occupancy;
use lumitex_geometry::{mesh, Image, TexelSet, Vec3, ViewSpec};
use lumitex_relight::*;
use proptest::prelude::*;

fn unit(v: [f64; 3]) -> Vec3 {
    Vec3::from(v).normalized()
}

/// Splitmix-style stream for reproducible sampling without the crate RNG.
struct Stream(u64);

impl Stream {
    fn next(&mut self) -> f64 {
        self.0 = self.0.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        ((z ^ (z >> 31)) >> 11) as f64 / (1u64 << 53) as f64
    }

    fn hemisphere(&mut self, n: Vec3) -> Vec3 {
        loop {
            let d = Vec3::new(2.0 * self.next() - 1.0, 2.0 * self.next() - 1.0, 2.0 * self.next() - 1.0);
            let len = d.length();
            if len > 1e-3 && len <= 1.0 && d.dot(n) > 1e-3 * len {
                return d / len;
            }
        }
    }
}

#[test]
fn reciprocity_over_a_thousand_samples() {
    let mut s = Stream(11);
    for _ in 0..1000 {
        let n = unit([s.next() - 0.5, s.next() - 0.5, s.next() - 0.5]);
        let (l, v) = (s.hemisphere(n), s.hemisphere(n));
        let mat = PbrSample::new([s.next(), s.next(), s.next()], s.next(), s.next());
        let (a, b) = (ggx_brdf(n, l, v, &mat), ggx_brdf(n, v, l, &mat));
        for c in 0..3 {
            assert!((a[c] - b[c]).abs() <= 1e-12, "{a:?} vs {b:?}");
        }
    }
}

proptest! {
    #[test]
    fn brdf_is_non_negative(
        n in prop::array::uniform3(-1.0f64..1.0),
        l in prop::array::uniform3(-1.0f64..1.0),
        v in prop::array::uniform3(-1.0f64..1.0),
        albedo in prop::array::uniform3(0.0f64..1.0),
        metallic in 0.0f64..1.0,
        roughness in 0.0f64..1.0,
    ) {
        let (n, l, v) = (Vec3::from(n), Vec3::from(l), Vec3::from(v));
        prop_assume!(n.length() > 1e-3 && l.length() > 1e-3 && v.length() > 1e-3);
        let f = ggx_brdf(n.normalized(), l.normalized(), v.normalized(), &PbrSample::new(albedo, metallic, roughness));
        prop_assert!(f.iter().all(|&x| x >= 0.0 && x.is_finite()));
    }
}

#[test]
fn head_on_rough_dielectric_matches_formula() {
    let albedo = [0.6, 0.3, 0.9];
    let mat = PbrSample::new(albedo, 0.0, 1.0);
    let n = Vec3::new(0.0, 0.0, 1.0);
    let got = ggx_brdf(n, n, n, &mat);
    // alpha = 1: D = 1/pi, G = 1, F = 0.04 at normal incidence.
    let spec = (1.0 / PI) * 0.04 * 1.0 / 4.0;
    for c in 0..3 {
        let want = albedo[c] / PI + spec;
        assert!((got[c] - want).abs() <= 0.1 * want, "{} vs {want}", got[c]);
    }
}

#[test]
fn black_albedo_dielectric_has_no_diffuse() {
    let mat = PbrSample::new([0.0; 3], 0.0, 0.5);
    assert_eq!(lumitex_relight::brdf::diffuse(&mat), [0.0; 3]);
}

#[test]
fn diffuse_white_furnace() {
    let mat = PbrSample::new([1.0; 3], 0.0, 1.0);
    let d = lumitex_relight::brdf::diffuse(&mat)[0];
    let k = 64;
    let (dt, dp) = (PI / 2.0 / k as f64, 2.0 * PI / k as f64);
    let mut integral = 0.0;
    for i in 0..k {
        let theta = (i as f64 + 0.5) * dt;
        for _ in 0..k {
            integral += d * theta.cos() * theta.sin() * dt * dp;
        }
    }
    assert!((0.95..=1.05).contains(&integral), "{integral}");
}

fn uniform_atlas(res: usize, m: Material) -> TextureAtlas {
    TextureAtlas::from_fn(res, &TexelSet::full(res), |_| m)
}

fn front_view() -> ViewSpec {
    ViewSpec::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.9, 24, 24, 0).unwrap()
}

#[test]
fn unlit_scene_is_black() {
    let atlas = uniform_atlas(8, Material {
        albedo: [0.7; 3],
        metallic: 0.3,
        roughness: 0.4,
    });
    let rig = LightRig {
        name: String::new(),
        lights: vec![DirectionalLight {
            direction: [0.0, 0.0, 1.0],
            radiance: [0.0; 3],
        }],
        ambient: [0.0; 3],
    };
    let r = render_relit(&mesh::quad(1.0), &atlas, &front_view(), &rig);
    assert!(r.mask.data.iter().any(|&m| m > 0.0));
    assert!(r.image.data.iter().all(|&v| v == 0.0));
}

#[test]
fn radiance_is_linear_in_light_strength() {
    let cube = mesh::cube();
    let atlas = TextureAtlas::from_fn(32, &occupancy(&cube, 32), |uv| Material {
        albedo: [uv[0], uv[1], 0.5],
        metallic: 0.0,
        roughness: 0.2 + 0.6 * uv[0],
    });
    let v = ViewSpec::look_at(Vec3::new(2.0, 1.5, 2.2), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.8, 32, 32, 0).unwrap();
    for rig in preset_rigs() {
        let a = render_relit(&cube, &atlas, &v, &rig);
        let b = render_relit(&cube, &atlas, &v, &rig.scaled(2.0));
        for (x, y) in a.radiance.data.iter().zip(&b.radiance.data) {
            assert!((2.0 * x - y).abs() <= 1e-9);
        }
    }
}

#[test]
fn frontal_quad_matches_hand_computed_shade() {
    let (albedo, metallic, roughness) = ([0.8, 0.5, 0.2], 0.25, 0.6);
    let atlas = uniform_atlas(4, Material { albedo, metallic, roughness });
    let rig = LightRig {
        name: String::new(),
        lights: vec![DirectionalLight {
            direction: [0.0, 0.0, 1.0],
            radiance: [1.5, 1.5, 1.5],
        }],
        ambient: [0.1, 0.1, 0.1],
    };
    let v = front_view();
    let r = render_relit(&mesh::quad(1.0), &atlas, &v, &rig);
    let alpha: f64 = roughness * roughness;
    for y in 0..v.height {
        for x in 0..v.width {
            if r.mask.pixel(x, y)[0] == 0.0 {
                continue;
            }
            let view_dir = -v.ray_dir(x, y);
            let nv = view_dir.z;
            let h = (Vec3::new(0.0, 0.0, 1.0) + view_dir).normalized();
            let nh = h.z;
            let d = alpha * alpha / (PI * (nh * nh * (alpha * alpha - 1.0) + 1.0).powi(2));
            let g1 = |c: f64| 2.0 * c / (c + (alpha * alpha + (1.0 - alpha * alpha) * c * c).sqrt());
            let g = g1(1.0) * g1(nv);
            let vh = view_dir.dot(h);
            for c in 0..3 {
                let f0 = 0.04 * (1.0 - metallic) + albedo[c] * metallic;
                let f = f0 + (1.0 - f0) * (1.0 - vh).powi(5);
                let brdf = (1.0 - metallic) * albedo[c] / PI + d * f * g / (4.0 * nv);
                let want = brdf * 1.5 + 0.1 * albedo[c];
                assert!((r.radiance.pixel(x, y)[c] - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn fibonacci_views_are_balanced() {
    assert_eq!(fibonacci_views(7, 3.0, 0.8, 16).unwrap().len(), 7);
    let dirs = lumitex_geometry::fibonacci_directions(32);
    assert_eq!(dirs.len(), 32);
    let mut c = Vec3::ZERO;
    for d in &dirs {
        assert!((d.length() - 1.0).abs() < 1e-12);
        c = c + *d;
    }
    assert!((c / 32.0).length() < 0.1);
}

#[test]
fn psnr_cases() {
    let a = Image::filled(4, 4, &[0.3, 0.6, 0.9]);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    assert_eq!(psnr(&Image::filled(4, 4, &[0.0]), &Image::filled(4, 4, &[1.0])).unwrap(), 0.0);
    assert!(psnr(&a, &Image::new(4, 5, 3)).is_err());
    let mut s = Stream(5);
    let x = Image::from_data(5, 3, 2, (0..30).map(|_| s.next()).collect()).unwrap();
    let y = Image::from_data(5, 3, 2, (0..30).map(|_| s.next()).collect()).unwrap();
    let mut se = 0.0;
    for i in 0..30 {
        se += (x.data[i] - y.data[i]).powi(2);
    }
    let want = -10.0 * (se / 30.0).log10();
    assert!((psnr(&x, &y).unwrap() - want).abs() < 1e-9);
}
