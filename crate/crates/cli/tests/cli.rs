use std::path::{Path, PathBuf};
use std::process::Command;

use lumitex_cli::dataset::{self, Pattern, Primitive, Rig, Scene};
use lumitex_relight::{preset_rigs, render_relit};
use lumitex_tensor::SplitMix64;

fn bundled() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenes/cube")
}

/// The bundled config with absolute inputs, tiny step counts and `out`.
fn tiny_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(bundled().join("pipeline.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    for k in ["mesh", "reference", "ground_truth"] {
        let rel = v[k].as_str().unwrap().to_string();
        v[k] = bundled().join(rel).to_str().unwrap().into();
    }
    v["pbr"]["stage1_steps"] = 2.into();
    v["pbr"]["stage2_steps"] = 2.into();
    v["lvsm_training"]["steps"] = 2.into();
    v["dataset"]["count"] = 2.into();
    v["sample_steps"] = 2.into();
    v["out_dir"] = dir.join("out").to_str().unwrap().into();
    let p = dir.join("pipeline.json");
    std::fs::write(&p, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    p
}

fn lumitex(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_lumitex")).args(args).env("RUST_LOG", "warn").output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

#[test]
fn infer_before_training_is_a_stage_order_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (code, err) = lumitex(&["infer", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("train-pbr"), "{err}");
}

#[test]
fn config_errors_exit_2_with_the_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["net"]["d"] = "wide".into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let (code, err) = lumitex(&["render-geo", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("net.d"), "{err}");

    v["net"]["d"] = 64.into();
    v["candidates"] = 2.into();
    std::fs::write(&cfg, v.to_string()).unwrap();
    let (code, err) = lumitex(&["render-geo", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("candidates"), "{err}");

    let (code, _) = lumitex(&["render-geo", "--config", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code, 2);
}

#[test]
fn stages_are_idempotent_and_out_flag_wins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("elsewhere");
    for _ in 0..2 {
        let (code, err) = lumitex(&["render-geo", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--threads", "1"]);
        assert_eq!(code, 0, "{err}");
    }
    assert!(!dir.path().join("out").exists());
    let a = std::fs::read(out.join("geo/view_00_normal.png")).unwrap();
    let cams = std::fs::read_to_string(out.join("geo/cameras.json")).unwrap();
    lumitex(&["render-geo", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(a, std::fs::read(out.join("geo/view_00_normal.png")).unwrap());
    assert_eq!(cams, std::fs::read_to_string(out.join("geo/cameras.json")).unwrap());
}

#[test]
fn one_scene_dataset_layout_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let rig = Rig::new(4, 3, 4.5, 0.8, 16).unwrap();
    let scenes = dataset::generate(1, 5, 32, &rig);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let index = dataset::write_dataset(&a, &scenes, 5).unwrap();
    dataset::write_dataset(&b, &dataset::generate(1, 5, 32, &rig), 5).unwrap();

    assert_eq!(index.scenes.len(), 1);
    let dirs: Vec<_> = std::fs::read_dir(&a).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    assert_eq!(dirs.len(), 1);
    assert_eq!(index.generation_views, 4);
    let rec = &index.scenes[0];
    assert_eq!(rec.views.len(), 7);
    for v in &rec.views {
        for p in [&v.shaded, &v.albedo, &v.mr] {
            assert!(a.join(p).exists());
        }
        assert!(a.join(format!("{}_normal.png", v.geo.display())).exists());
    }
    for rel in walk(&a) {
        assert_eq!(std::fs::read(a.join(&rel)).unwrap(), std::fs::read(b.join(&rel)).unwrap(), "{}", rel.display());
    }

    let loaded = dataset::load_dataset(&a).unwrap();
    assert_eq!(loaded[0].views.len(), 7);
    for (x, y) in loaded[0].views.iter().zip(&scenes[0].views) {
        assert_eq!(x.spec, y.spec);
        let err = x.shaded.data.iter().zip(&y.shaded.data).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err <= 1.0 / 65535.0, "{err}");
    }
}

fn walk(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![PathBuf::new()];
    while let Some(rel) = stack.pop() {
        for e in std::fs::read_dir(root.join(&rel)).unwrap() {
            let e = e.unwrap();
            let r = rel.join(e.file_name());
            if e.path().is_dir() {
                stack.push(r);
            } else {
                out.push(r);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn shaded_targets_are_the_relit_ground_truth() {
    let rig = Rig::new(2, 2, 4.5, 0.8, 16).unwrap();
    let light = preset_rigs().remove(2);
    let s = Scene::build("t", Primitive::Cylinder, Pattern::Gradient, light.clone(), 64, &rig, &mut SplitMix64::new(1));
    for v in &s.views {
        assert_eq!(v.shaded, render_relit(&s.mesh, &s.atlas, &v.spec, &light).image);
    }
    assert_eq!(s.reference(), &s.views[0].shaded);
}

#[test]
fn full_pipeline_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let (code, err) = lumitex(&["pipeline", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    let out = dir.path().join("out");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("eval/eval.json")).unwrap()).unwrap();
    let cov: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("bake/coverage.json")).unwrap()).unwrap();
    assert_eq!(report["coverage_after"], cov["after"]["ratio"]);
    assert_eq!(report["coverage_before"], cov["before"]["ratio"]);
    assert!(report["coverage_after"].as_f64().unwrap() >= report["coverage_before"].as_f64().unwrap());
    assert_eq!(report["relight_psnr"].as_array().unwrap().len(), 6);
    for f in ["atlas/albedo.png", "atlas/metallic.png", "atlas/roughness.png", "before/albedo.png"] {
        assert!(out.join("bake").join(f).exists(), "{f}");
    }
}
