use std::collections::BTreeSet;

use lumitex_bake::*;
use lumitex_geometry::mesh;
use lumitex_geometry::texel::{occupancy, texel_id, wrap_uv};
use lumitex_geometry::{fibonacci_views, visible_texels, Image, Mat3, TexelSet, TriMesh, Vec3, ViewSpec};

fn axis_views(res: usize) -> Vec<ViewSpec> {
    [
        Vec3::new(1.0, 0.0, 0.0),
        Vec3::new(-1.0, 0.0, 0.0),
        Vec3::new(0.0, 1.0, 0.0),
        Vec3::new(0.0, -1.0, 0.0),
        Vec3::new(0.0, 0.0, 1.0),
        Vec3::new(0.0, 0.0, -1.0),
    ]
    .iter()
    .enumerate()
    .map(|(i, &a)| ViewSpec::look_at(a * 3.5, Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.9, res, res, i).unwrap())
    .collect()
}

#[test]
fn candidates_sit_on_the_sphere_and_are_distinct() {
    let c = candidate_set(64, 3.0, 0.8, 16).unwrap();
    assert_eq!(c.len(), 64);
    for v in &c {
        assert!((v.origin().length() - 3.0).abs() < 1e-9);
    }
    let mut min_angle = f64::INFINITY;
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            let cos = c[i].origin().normalized().dot(c[j].origin().normalized()).clamp(-1.0, 1.0);
            min_angle = min_angle.min(cos.acos());
        }
    }
    assert!(min_angle > 0.0);
    let one = candidate_set(1, 3.0, 0.8, 16).unwrap();
    assert_eq!(one.len(), 1);
    assert!((one[0].origin().normalized() - lumitex_geometry::fibonacci_directions(1)[0]).length() < 1e-12);
    assert!(candidate_set(0, 3.0, 0.8, 16).is_err());
}

#[test]
fn zero_picks_and_too_many_picks() {
    let cube = mesh::cube();
    let c = axis_views(32);
    let s = greedy_select(&cube, &c, &[], 0, 32, &Greedy).unwrap();
    assert!(s.picks.is_empty());
    assert!(matches!(greedy_select(&cube, &c, &[], 7, 32, &Greedy), Err(BakeError::Contract(_))));
}

#[test]
fn duplicate_of_initial_view_is_not_chosen() {
    let cube = mesh::cube();
    let axes = axis_views(48);
    let initial = vec![axes[0].clone()];
    let s = greedy_select(&cube, &axes, &initial, 5, 64, &Greedy).unwrap();
    assert!(s.picks.iter().all(|p| p.candidate != 0));
}

#[test]
fn cube_missing_faces_are_selected_in_gain_order() {
    let cube = mesh::cube();
    let axes = axis_views(48);
    let initial: Vec<ViewSpec> = axes.iter().filter(|v| v.index != 2 && v.index != 5).cloned().collect();
    let s = greedy_select(&cube, &axes, &initial, 2, 64, &Greedy).unwrap();

    // Oracle: the ordered pair maximizing total coverage, first element the
    // one with the larger individual gain (lower index on ties).
    let mut covered = TexelSet::new(64);
    for v in &initial {
        covered.union_with(&visible_texels(&cube, v, 64));
    }
    let sets: Vec<TexelSet> = axes.iter().map(|v| visible_texels(&cube, v, 64)).collect();
    let mut best = (0, 0, 0);
    for a in 0..6 {
        for b in 0..6 {
            if a == b {
                continue;
            }
            let mut u = covered.clone();
            u.union_with(&sets[a]);
            u.union_with(&sets[b]);
            let (ga, gb) = (sets[a].difference_count(&covered), sets[b].difference_count(&covered));
            if u.count() > best.2 && (ga > gb || (ga == gb && a < b)) {
                best = (a, b, u.count());
            }
        }
    }
    let got: Vec<usize> = s.picks.iter().map(|p| p.candidate).collect();
    assert_eq!(got, vec![best.0, best.1]);
    let mut faces = got.clone();
    faces.sort();
    assert_eq!(faces, vec![2, 5]);
}

// ---- Independent greedy over brute-force visibility

fn ray_hit(o: Vec3, d: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Option<(f64, f64, f64)> {
    let (e1, e2) = (b - a, c - a);
    let p = d.cross(e2);
    let det = e1.dot(p);
    if det <= 0.0 {
        return None;
    }
    let s = o - a;
    let u = s.dot(p) / det;
    let q = s.cross(e1);
    let v = d.dot(q) / det;
    if u < 0.0 || v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(q) / det;
    (t > 0.0).then_some((t, u, v))
}

fn brute_visible(m: &TriMesh, v: &ViewSpec, res: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for y in 0..v.height {
        for x in 0..v.width {
            let d = v.ray_dir(x, y);
            let hit = (0..m.triangle_count())
                .filter_map(|t| {
                    let [a, b, c] = m.corners(t);
                    ray_hit(v.origin(), d, a, b, c).map(|h| (h, t))
                })
                .fold(None, |acc: Option<((f64, f64, f64), usize)>, h| match acc {
                    Some(a) if a.0 .0 <= h.0 .0 => Some(a),
                    _ => Some(h),
                });
            let Some(((_, u, w), t)) = hit else { continue };
            let [a, b, c] = m.corners(t);
            let n = (b - a).cross(c - a);
            if (n.dot(d) / n.length()).abs() < 0.2 {
                continue;
            }
            let uv = m.corner_uvs[t];
            let p = [
                uv[0][0] * (1.0 - u - w) + uv[1][0] * u + uv[2][0] * w,
                uv[0][1] * (1.0 - u - w) + uv[1][1] * u + uv[2][1] * w,
            ];
            out.insert(texel_id(wrap_uv(p).0, res) as usize);
        }
    }
    out
}

fn oracle_greedy(m: &TriMesh, cands: &[ViewSpec], initial: &[ViewSpec], picks: usize, res: usize) -> Vec<(usize, usize)> {
    let occ: BTreeSet<usize> = occupancy(m, res).iter().collect();
    let mut covered: BTreeSet<usize> = BTreeSet::new();
    for v in initial {
        covered.extend(brute_visible(m, v, res).intersection(&occ));
    }
    let sets: Vec<BTreeSet<usize>> = cands.iter().map(|v| brute_visible(m, v, res).intersection(&occ).cloned().collect()).collect();
    let mut used = vec![false; cands.len()];
    let mut out = Vec::new();
    for _ in 0..picks {
        let mut best: Option<(usize, usize)> = None;
        for k in 0..cands.len() {
            if used[k] {
                continue;
            }
            let g = sets[k].difference(&covered).count();
            match best {
                Some((_, bg)) if bg >= g => {}
                _ => best = Some((k, g)),
            }
        }
        let (k, g) = best.unwrap();
        used[k] = true;
        covered.extend(sets[k].iter().cloned());
        out.push((k, g));
    }
    out
}

#[test]
fn greedy_matches_independent_oracle() {
    let scenes: Vec<(&str, TriMesh)> = vec![
        ("cube", mesh::cube()),
        ("icosphere", mesh::icosphere(1)),
        ("cylinder", mesh::cylinder(20)),
    ];
    for (name, m) in &scenes {
        let cands = candidate_set(12, 3.2, 0.8, 40).unwrap();
        let initial = fibonacci_views(2, 3.0, 0.8, 40).unwrap();
        let got = greedy_select(m, &cands, &initial, 5, 64, &Greedy).unwrap();
        let want = oracle_greedy(m, &cands, &initial, 5, 64);
        let got: Vec<(usize, usize)> = got.picks.iter().map(|p| (p.candidate, p.gain)).collect();
        assert_eq!(got, want, "{name}");
        for w in got.windows(2) {
            assert!(w[0].1 >= w[1].1, "{name}: gains increase {got:?}");
        }
    }
}

#[test]
fn coverage_is_monotone_and_static_variant_runs() {
    let m = mesh::icosphere(1);
    let cands = candidate_set(10, 3.2, 0.8, 32).unwrap();
    let mut st = CoverageState::new(&m, 32);
    let mut last = 0.0;
    for v in &cands {
        st.add_view(&m, v);
        assert!(st.ratio() >= last);
        assert!(st.covered.is_subset(&st.occupied));
        last = st.ratio();
    }
    let reg = selector_registry();
    let s = greedy_select(&m, &cands, &[], 4, 32, reg.get("static").unwrap()).unwrap();
    assert_eq!(s.picks.len(), 4);
    let g = greedy_select(&m, &cands, &[], 4, 32, reg.get("greedy").unwrap()).unwrap();
    assert!(g.after.ratio() >= s.after.ratio() - 1e-12);
}

// ---- Baking

fn constant_image(v: &ViewSpec, value: [f64; 3]) -> Image {
    Image::filled(v.width, v.height, &value)
}

#[test]
fn constant_image_bakes_to_constant_texels() {
    let q = mesh::quad(1.0);
    let v = ViewSpec::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.9, 32, 32, 0).unwrap();
    let (a, mr) = (constant_image(&v, [0.2, 0.5, 0.7]), constant_image(&v, [0.1, 0.8, 0.0]));
    let atlas = bake(&q, &[BakeView { view: &v, albedo: &a, mr: &mr }], 16).unwrap();
    assert!(atlas.mask.count() > 0);
    for id in atlas.mask.iter() {
        let m = atlas.get(id);
        assert_eq!(m.albedo, [0.2, 0.5, 0.7]);
        assert_eq!((m.metallic, m.roughness), (0.1, 0.8));
    }
}

#[test]
fn frontal_view_wins_shared_texels() {
    let q = mesh::quad(1.0);
    let front = ViewSpec::look_at(Vec3::new(0.0, 0.0, 3.0), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.9, 32, 32, 0).unwrap();
    let grazing = ViewSpec::look_at(Vec3::new(2.6, 0.0, 1.5), Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0), 0.9, 32, 32, 1).unwrap();
    let (fa, ga) = (constant_image(&front, [1.0, 0.0, 0.0]), constant_image(&grazing, [0.0, 0.0, 1.0]));
    let mr = constant_image(&front, [0.0, 0.5, 0.0]);
    // Grazing view first so the winner is not decided by order.
    let views = [
        BakeView { view: &grazing, albedo: &ga, mr: &mr },
        BakeView { view: &front, albedo: &fa, mr: &mr },
    ];
    let atlas = bake(&q, &views, 16).unwrap();
    let shared: Vec<usize> = visible_texels(&q, &front, 16).iter().filter(|&i| visible_texels(&q, &grazing, 16).contains(i)).collect();
    assert!(!shared.is_empty());
    for id in shared {
        assert_eq!(atlas.get(id).albedo, [1.0, 0.0, 0.0]);
    }
    let w = bake_with(&q, &views, 16, blend_registry().get("weighted").unwrap(), 0.2).unwrap();
    assert_eq!(w.mask, atlas.mask);
}

fn smooth_material(uv: [f64; 2]) -> Material {
    let (u, v) = (uv[0], uv[1]);
    let tau = std::f64::consts::TAU;
    Material {
        albedo: [
            0.5 + 0.3 * (tau * u).sin() * (tau * v).cos(),
            0.45 + 0.35 * (tau * (u + 0.5 * v)).cos(),
            0.4 + 0.25 * (2.0 * tau * v).sin(),
        ],
        metallic: 0.2 + 0.6 * u,
        roughness: 0.3 + 0.5 * v,
    }
}

#[test]
fn bake_round_trip_recovers_ground_truth() {
    let cube = mesh::cube();
    let res = 128;
    let gt = TextureAtlas::from_fn(res, &occupancy(&cube, res), smooth_material);
    let views = fibonacci_views(8, 3.2, 0.8, 256).unwrap();
    let rendered: Vec<MaterialViews> = views.iter().map(|v| render_material(&cube, &gt, v)).collect();
    let inputs: Vec<BakeView> = views
        .iter()
        .zip(&rendered)
        .map(|(v, r)| BakeView { view: v, albedo: &r.albedo, mr: &r.mr })
        .collect();
    let baked = bake(&cube, &inputs, res).unwrap();

    let mut union = TexelSet::new(res);
    for v in &views {
        union.union_with(&visible_texels(&cube, v, res));
    }
    union.intersect_with(&occupancy(&cube, res));
    assert_eq!(baked.mask, union);

    let (mut se, mut n) = (0.0, 0usize);
    for id in baked.mask.iter() {
        for (a, b) in baked.get(id).to_array().iter().zip(gt.get(id).to_array()) {
            se += (a - b) * (a - b);
            n += 1;
        }
    }
    let psnr = 10.0 * (1.0 / (se / n as f64)).log10();
    assert!(psnr >= 35.0, "{psnr}");

    let again = bake(&cube, &inputs, res).unwrap();
    assert_eq!(again, baked);
}

#[test]
fn dilation_keeps_covered_texels() {
    let cube = mesh::cube();
    let res = 64;
    let v = fibonacci_views(3, 3.2, 0.8, 96).unwrap();
    let gt = TextureAtlas::from_fn(res, &occupancy(&cube, res), smooth_material);
    let r: Vec<MaterialViews> = v.iter().map(|vv| render_material(&cube, &gt, vv)).collect();
    let inputs: Vec<BakeView> = v.iter().zip(&r).map(|(vv, rr)| BakeView { view: vv, albedo: &rr.albedo, mr: &rr.mr }).collect();
    let baked = bake(&cube, &inputs, res).unwrap();
    let d = seam_dilate(&baked, &occupancy(&cube, res), 3);
    for id in baked.mask.iter() {
        assert_eq!(d.get(id), baked.get(id));
    }
    assert_eq!(d.mask, baked.mask);
    assert!(d.filled.count() > 0);
    for id in d.filled.iter() {
        assert!(!d.mask.contains(id) && occupancy(&cube, res).contains(id));
    }
}

#[test]
fn mismatched_image_is_a_contract_error() {
    let v = ViewSpec::new(Mat3::IDENTITY, Vec3::new(0.0, 0.0, 3.0), 0.9, 16, 16, 0).unwrap();
    let small = Image::new(8, 8, 3);
    let err = bake(&mesh::quad(1.0), &[BakeView { view: &v, albedo: &small, mr: &small }], 8).unwrap_err();
    assert!(matches!(err, BakeError::Contract(_)));
}
