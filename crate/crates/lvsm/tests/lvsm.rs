use lumitex_geometry::{fibonacci_views, mesh, rasterize, GeoMaps, Image};
use lumitex_lvsm::*;
use lumitex_tensor::{Graph, SplitMix64, Tensor};

fn cfg(res: usize, depth: usize) -> LvsmConfig {
    LvsmConfig {
        d: 16,
        depth,
        heads: 2,
        patch: 4,
        image_res: res,
        channels: 6,
    }
}

fn maps(n: usize, res: usize) -> Vec<GeoMaps> {
    let m = mesh::cube();
    fibonacci_views(n, 4.5, 0.8, res).unwrap().iter().map(|v| rasterize(&m, v)).collect()
}

fn random_image(res: usize, ch: usize, rng: &mut SplitMix64) -> Image {
    Image::from_data(res, res, ch, (0..res * res * ch).map(|_| rng.uniform()).collect()).unwrap()
}

fn views(n: usize, m: usize, res: usize, seed: u64) -> (Vec<CondView>, Vec<TargetView>) {
    let mut rng = SplitMix64::new(seed);
    let all = maps(n + m, res);
    let conds = (0..n).map(|i| CondView::new(random_image(res, 6, &mut rng), &all[i], i)).collect();
    let targets = (n..n + m).map(|i| TargetView::new(&all[i], i)).collect();
    (conds, targets)
}

/// A scene whose images are a fixed function of the geometry.
fn scene(name: &str, n: usize, res: usize) -> LvsmScene {
    LvsmScene {
        name: name.into(),
        views: maps(n, res)
            .into_iter()
            .map(|g| SceneView {
                image: g.geometry6(),
                maps: g,
            })
            .collect(),
    }
}

#[test]
fn token_counts_and_tags() {
    let model = Lvsm::new(&cfg(32, 1), 0).unwrap();
    let (c, t) = views(2, 3, 32, 1);
    let mut g = Graph::new();
    let tok = model.tokenize(&mut g, &c, &t).unwrap();
    assert_eq!(g.shape(tok.value), &[5 * 64, 16]);
    assert_eq!(tok.tags.iter().filter(|r| r.0 == Role::Condition).count(), 128);
    assert_eq!(tok.tags.iter().filter(|r| r.0 == Role::Target).count(), 192);
    assert_eq!(tok.tags[128], (Role::Target, 0));
}

#[test]
fn zero_condition_inputs_give_the_projection_bias() {
    let c = cfg(8, 1);
    let model = Lvsm::new(&c, 2).unwrap();
    let zero = CondView {
        image: Image::new(8, 8, 6),
        plucker: Image::new(8, 8, 6),
        geo: Image::new(8, 8, 6),
        view: 0,
    };
    let (_, t) = views(0, 1, 8, 3);
    let mut g = Graph::new();
    let tok = model.tokenize(&mut g, &[zero], &t).unwrap();
    let bias = model.store.get(model.cond_proj.bias).value.data().to_vec();
    for r in 0..c.tokens_per_view() {
        assert_eq!(g.value(tok.value).row(r), &bias[..]);
    }
}

#[test]
fn condition_images_reach_their_own_tokens_only() {
    let model = Lvsm::new(&cfg(16, 1), 4).unwrap();
    let (mut c, t) = views(2, 1, 16, 5);
    let mut g = Graph::new();
    let before = model.tokenize(&mut g, &c, &t).unwrap();
    let before = g.value(before.value).clone();
    c[1].image.data[0] += 0.5;
    let after = model.tokenize(&mut g, &c, &t).unwrap();
    let after = g.value(after.value);
    let l = 16;
    for r in 0..3 * l {
        let same = before.row(r) == after.row(r);
        assert_eq!(same, r != l, "row {r}");
    }
}

#[test]
fn resolution_mismatch_is_rejected() {
    let model = Lvsm::new(&cfg(16, 1), 0).unwrap();
    let (c, _) = views(1, 0, 16, 1);
    let (_, t) = views(0, 1, 8, 1);
    let mut g = Graph::new();
    assert!(matches!(model.tokenize(&mut g, &c, &t), Err(LvsmError::Contract(_))));
    assert!(matches!(model.tokenize(&mut g, &c, &[]), Err(LvsmError::Contract(_))));
}

#[test]
fn zero_depth_is_identity_and_depth_preserves_shape() {
    let (c, t) = views(1, 2, 16, 6);
    let flat = Lvsm::new(&cfg(16, 0), 1).unwrap();
    let mut g = Graph::new();
    let tok = flat.tokenize(&mut g, &c, &t).unwrap();
    assert_eq!(flat.forward(&mut g, &tok).unwrap().value, tok.value);

    let deep = Lvsm::new(&cfg(16, 2), 1).unwrap();
    let tok = deep.tokenize(&mut g, &c, &t).unwrap();
    let out = deep.forward(&mut g, &tok).unwrap();
    assert_eq!(g.shape(out.value), g.shape(tok.value));
    assert_eq!(out.tags, tok.tags);
}

#[test]
fn targets_see_condition_images() {
    let model = Lvsm::new(&cfg(16, 1), 7).unwrap();
    let (mut c, t) = views(2, 1, 16, 8);
    let run = |c: &[CondView]| {
        let mut g = Graph::new();
        let tok = model.tokenize(&mut g, c, &t).unwrap();
        let out = model.forward(&mut g, &tok).unwrap();
        let y = out.target_rows(&mut g).unwrap();
        g.value(y).clone()
    };
    let a = run(&c);
    c[0].image.data[10] += 0.3;
    assert!(a.max_abs_diff(&run(&c)) > 1e-9);
}

#[test]
fn detokenize_shapes_bias_and_affinity() {
    let c = cfg(16, 1);
    let model = Lvsm::new(&c, 9).unwrap();
    let l = c.tokens_per_view();
    let mut g = Graph::new();
    let zero = g.input(Tensor::zeros([2 * l, 16]));
    let imgs = model.detokenize(&mut g, zero).unwrap();
    assert_eq!(imgs.len(), 2);
    assert_eq!((imgs[0].width, imgs[0].height, imgs[0].channels), (16, 16, 6));
    let bias = model.store.get(model.head.bias).value.data();
    let raw = model.detokenize_raw(&mut g, zero).unwrap();
    for r in 0..2 * l {
        assert_eq!(g.value(raw).row(r), bias);
    }

    let mut rng = SplitMix64::new(10);
    let (ta, tb) = (Tensor::randn([l, 16], &mut rng), Tensor::randn([l, 16], &mut rng));
    let sum = Tensor::from_fn([l, 16], |i| ta.data()[i] + tb.data()[i]);
    let mut det = |t: Tensor| {
        let v = g.input(t);
        let o = model.detokenize_raw(&mut g, v).unwrap();
        g.value(o).clone()
    };
    let (a, b, z, ab) = (det(ta), det(tb), det(Tensor::zeros([l, 16])), det(sum));
    let lhs = Tensor::from_fn(ab.shape().to_vec(), |i| a.data()[i] + b.data()[i] - z.data()[i]);
    assert!(lhs.max_abs_diff(&ab) < 1e-9);

    let bad = g.input(Tensor::zeros([l + 1, 16]));
    assert!(matches!(model.detokenize(&mut g, bad), Err(LvsmError::Contract(_))));
}

#[test]
fn permuting_targets_permutes_outputs_bit_for_bit() {
    for seed in 0..6 {
        let model = Lvsm::new(&cfg(16, 2), seed).unwrap();
        let (c, t) = views(2, 3, 16, 100 + seed);
        let base = model.synthesize(&c, &t, None).unwrap();
        let perm = [2usize, 0, 1];
        let shuffled: Vec<TargetView> = perm.iter().map(|&i| t[i].clone()).collect();
        let out = model.synthesize(&c, &shuffled, None).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(out[k].data, base[i].data, "seed {seed}, slot {k}");
        }
    }
}

#[test]
fn synthesize_masks_and_handles_no_targets() {
    let model = Lvsm::new(&cfg(16, 1), 3).unwrap();
    let (c, t) = views(2, 2, 16, 11);
    assert!(model.synthesize(&c, &[], None).unwrap().is_empty());
    let geo = maps(4, 16);
    let masks = vec![geo[2].mask.clone(), geo[3].mask.clone()];
    let out = model.synthesize(&c, &t, Some(&masks)).unwrap();
    for (img, mask) in out.iter().zip(&masks) {
        for (px, m) in img.data.chunks(6).zip(&mask.data) {
            if *m < 0.5 {
                assert!(px.iter().all(|&x| x == 0.0));
            }
        }
    }
}

fn train_cfg(steps: usize) -> LvsmTrainConfig {
    LvsmTrainConfig {
        net: cfg(16, 2),
        lr: 2e-3,
        steps,
        seed: 0,
        conditions: 2,
        targets: 2,
    }
}

#[test]
fn resume_matches_uninterrupted_training() {
    let scenes = vec![scene("a", 6, 16), scene("b", 5, 16)];
    let cfg = train_cfg(100);
    let full = train_lvsm(&scenes, &cfg, None).unwrap();

    let mut first = LvsmTrainer::new(&cfg, &scenes).unwrap();
    for _ in 0..50 {
        first.step().unwrap();
    }
    let bytes = first.checkpoint().to_bytes().unwrap();
    let ckpt = lumitex_tensor::Checkpoint::from_bytes(&bytes).unwrap();
    let mut second = LvsmTrainer::resume(&cfg, &scenes, &ckpt).unwrap();
    for _ in 0..50 {
        second.step().unwrap();
    }
    assert_eq!(second.steps_taken(), 100);
    assert_eq!(second.checkpoint().to_bytes().unwrap(), full.checkpoint.to_bytes().unwrap());
    let tail: Vec<f64> = full.log[50..].iter().map(|r| r.loss).collect();
    assert_eq!(second.log.iter().map(|r| r.loss).collect::<Vec<_>>(), tail);
}

#[test]
fn short_scenes_are_skipped() {
    let cfg = train_cfg(1);
    assert!(matches!(LvsmTrainer::new(&cfg, &[scene("tiny", 3, 16)]), Err(LvsmError::Contract(_))));
    let t = train_lvsm(&[scene("tiny", 3, 16), scene("ok", 4, 16)], &cfg, None).unwrap();
    assert_eq!(t.log.len(), 1);
}

#[test]
fn training_lowers_the_loss() {
    let scenes: Vec<_> = (0..4).map(|i| scene(&format!("s{i}"), 6 + i, 16)).collect();
    let out = train_lvsm(&scenes, &train_cfg(1000), None).unwrap();
    let late = out.log[900..].iter().map(|r| r.loss).sum::<f64>() / 100.0;
    assert!(out.log[0].loss > late, "step 0 {} vs late {late}", out.log[0].loss);
}

#[test]
fn artifacts_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = train_cfg(3);
    let out = train_lvsm(&[scene("a", 4, 16)], &cfg, Some(dir.path())).unwrap();
    assert_eq!(read_lvsm_log(dir.path().join("lvsm_log.csv")).unwrap(), out.log);
    assert_eq!(LvsmTrainConfig::load(dir.path().join("lvsm_config.json")).unwrap(), cfg);
    let ck = lumitex_tensor::Checkpoint::load(dir.path().join("lvsm.ckpt")).unwrap();
    let model = lvsm_from_checkpoint(&ck).unwrap();
    let (c, t) = views(2, 1, 16, 3);
    assert_eq!(model.synthesize(&c, &t, None).unwrap().len(), 1);
}
