use lumitex_tensor::{Adam, AdamConfig, Graph, Linear, ParamStore, SplitMix64, Tensor, TensorError};
use proptest::prelude::*;

fn rand(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape.to_vec(), -1.0, 1.0, &mut SplitMix64::new(seed))
}

fn triple_loop(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    Tensor::from_fn([m, n], |idx| {
        let (i, j) = (idx / n, idx % n);
        (0..k).map(|p| a.data()[i * k + p] * b.data()[p * n + j]).sum()
    })
}

#[test]
fn matmul_identity_and_zero() {
    let a = rand(&[3, 3], 1);
    assert_eq!(Tensor::eye(3).matmul(&a).unwrap(), a);
    let z = Tensor::zeros([2, 3]).matmul(&rand(&[3, 4], 2)).unwrap();
    assert_eq!(z, Tensor::zeros([2, 4]));
}

#[test]
fn matmul_matches_triple_loop() {
    let (a, b) = (rand(&[3, 3], 3), rand(&[3, 3], 4));
    let mut g = Graph::new();
    let (va, vb) = (g.input(a.clone()), g.input(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    assert!(g.value(c).max_abs_diff(&triple_loop(&a, &b)) < 1e-12);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros([2, 3]));
    let b = g.input(Tensor::zeros([4, 5]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, TensorError::Shape { .. }));
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn matmul_is_associative() {
    for seed in 0..10 {
        let (a, b, c) = (rand(&[4, 4], seed), rand(&[4, 4], seed + 100), rand(&[4, 4], seed + 200));
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-9);
    }
}

fn softmax_of(rows: usize, cols: usize, data: Vec<f64>) -> Tensor {
    let mut g = Graph::new();
    let x = g.input(Tensor::new([rows, cols], data).unwrap());
    let y = g.softmax_rows(x);
    g.value(y).clone()
}

#[test]
fn softmax_closed_forms() {
    let y = softmax_of(1, 4, vec![2.5; 4]);
    for &v in y.data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
    let y = softmax_of(1, 2, vec![0.0, 3f64.ln()]);
    assert!((y.data()[0] - 0.25).abs() < 1e-15);
    assert!((y.data()[1] - 0.75).abs() < 1e-15);
}

/// Softmax computed as `1 / sum_j exp(x_j - x_i)` with compensated sums: an
/// independent route that avoids the max-shift of the implementation.
fn softmax_reference(row: &[f64]) -> Vec<f64> {
    row.iter()
        .map(|&xi| {
            let (mut sum, mut comp) = (0.0f64, 0.0f64);
            for &xj in row {
                let term = (xj - xi).exp();
                let t = sum + term;
                if sum.abs() >= term.abs() {
                    comp += (sum - t) + term;
                } else {
                    comp += (term - t) + sum;
                }
                sum = t;
            }
            1.0 / (sum + comp)
        })
        .collect()
}

#[test]
fn softmax_matches_reference() {
    let x = rand(&[5, 7], 11).map(|v| 6.0 * v);
    let y = softmax_of(5, 7, x.data().to_vec());
    for r in 0..5 {
        let want = softmax_reference(x.row(r));
        for (a, b) in y.row(r).iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }
}

#[test]
fn softmax_survives_huge_logits() {
    let y = softmax_of(1, 3, vec![1e300, 1e300, -1e300]);
    assert!((y.data()[0] - 0.5).abs() < 1e-12);
    assert!(y.data().iter().all(|v| v.is_finite()));
}

proptest! {
    #[test]
    fn softmax_rows_are_stochastic_and_shift_invariant(
        data in proptest::collection::vec(-30.0f64..30.0, 12),
        shift in -50.0f64..50.0,
    ) {
        let y = softmax_of(3, 4, data.clone());
        for r in 0..3 {
            prop_assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        let shifted: Vec<f64> = data.iter().map(|v| v + shift).collect();
        let z = softmax_of(3, 4, shifted);
        prop_assert!(y.max_abs_diff(&z) < 1e-9);
    }
}

#[test]
fn linear_identity_zero_and_oracle() {
    let mut g = Graph::new();
    let x = rand(&[5, 3], 21);
    let vx = g.input(x.clone());
    let w = g.input(Tensor::eye(3));
    let b = g.input(Tensor::zeros([3]));
    let y = g.linear(vx, w, b).unwrap();
    assert_eq!(g.value(y), &x);

    let bias = rand(&[4], 22);
    let z = g.input(Tensor::zeros([2, 3]));
    let w = g.input(rand(&[3, 4], 23));
    let b = g.input(bias.clone());
    let y = g.linear(z, w, b).unwrap();
    for r in 0..2 {
        assert_eq!(g.value(y).row(r), bias.data());
    }

    let (xw, ww, bw) = (rand(&[2, 3, 3], 24), rand(&[3, 4], 25), rand(&[4], 26));
    let (vx, vw, vb) = (g.input(xw.clone()), g.input(ww.clone()), g.input(bw.clone()));
    let y = g.linear(vx, vw, vb).unwrap();
    assert_eq!(g.shape(y), &[2, 3, 4]);
    let flat = xw.clone().reshape([6, 3]).unwrap();
    let want = triple_loop(&flat, &ww);
    for r in 0..6 {
        for c in 0..4 {
            let got = g.value(y).data()[r * 4 + c];
            assert!((got - (want.data()[r * 4 + c] + bw.data()[c])).abs() < 1e-12);
        }
    }
    let bad = g.input(Tensor::zeros([2, 5]));
    let w = g.input(Tensor::zeros([3, 4]));
    assert!(g.linear(bad, w, b).is_err());
}

#[test]
fn layer_norm_cases() {
    let mut g = Graph::new();
    let x = g.input(Tensor::full([1, 6], 3.0));
    let y = g.layer_norm(x, 1e-6).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));

    let x = g.input(Tensor::new([1, 2], vec![-1.0, 1.0]).unwrap());
    let y = g.layer_norm(x, 1e-12).unwrap();
    assert!((g.value(y).data()[0] + 1.0).abs() < 1e-9);
    assert!((g.value(y).data()[1] - 1.0).abs() < 1e-9);

    let x = g.input(rand(&[4, 16], 31).map(|v| 5.0 * v + 2.0));
    let y = g.layer_norm(x, 1e-12).unwrap();
    for r in 0..4 {
        let row = g.value(y).row(r);
        let mean = row.iter().sum::<f64>() / 16.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
    let x = g.input(Tensor::zeros([3, 1]));
    assert!(g.layer_norm(x, 1e-6).is_err());
}

#[test]
fn backward_trivial_cases() {
    let mut g = Graph::new();
    let x = g.input_with_grad(rand(&[3, 4], 41));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), &Tensor::ones([3, 4]));

    let mut g = Graph::new();
    let x = g.input_with_grad(rand(&[3, 4], 42));
    let y = g.input_with_grad(rand(&[2, 2], 43));
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert_eq!(g.grad_or_zeros(x), Tensor::zeros([3, 4]));

    let mut g = Graph::new();
    let x = g.input_with_grad(rand(&[3, 4], 44));
    let err = g.backward(x).unwrap_err();
    assert!(matches!(err, TensorError::Contract(_)));
}

#[test]
fn frozen_param_is_bit_identical_after_a_step() {
    let mut rng = SplitMix64::new(7);
    let mut ps = ParamStore::new();
    let l1 = Linear::new(&mut ps, "l1", 4, 8, &mut rng).unwrap();
    let l2 = Linear::new(&mut ps, "l2", 8, 2, &mut rng).unwrap();
    ps.freeze_prefix("l1");
    let before: Vec<Tensor> = ps.iter().map(|p| p.value.clone()).collect();
    let mut adam = Adam::new(AdamConfig::default(), &ps);
    let mut g = Graph::new();
    let x = g.input(rand(&[5, 4], 8));
    let h = l1.forward(&mut g, &ps, x).unwrap();
    let h = g.gelu(h);
    let y = l2.forward(&mut g, &ps, h).unwrap();
    let loss = g.mean_square(y);
    g.backward(loss).unwrap();
    g.write_param_grads(&mut ps);
    for p in ps.iter().filter(|p| p.frozen) {
        assert!(p.grad.data().iter().all(|&v| v == 0.0));
    }
    adam.step(&mut ps);
    for (p, old) in ps.iter().zip(&before) {
        if p.frozen {
            assert_eq!(p.value.data(), old.data());
        } else {
            assert_ne!(p.value.data(), old.data());
        }
    }
}

#[test]
fn attention_output_ignores_key_order() {
    let (t, s, d) = (5, 9, 8);
    let q = rand(&[t, d], 1);
    let k = rand(&[s, d], 2);
    let v = rand(&[s, d], 3);
    let bias = rand(&[t, s], 4);
    let mut perm: Vec<usize> = (0..s).collect();
    SplitMix64::new(5).shuffle(&mut perm);
    let permute_rows = |x: &Tensor| {
        let data = perm.iter().flat_map(|&j| x.row(j).to_vec()).collect();
        Tensor::new(x.shape().to_vec(), data).unwrap()
    };
    let bias_p = Tensor::from_fn([t, s], |i| bias.data()[(i / s) * s + perm[i % s]]);
    let run = |k: Tensor, v: Tensor, b: Tensor| {
        let mut g = Graph::new();
        let (q, k, v, b) = (g.input(q.clone()), g.input(k), g.input(v), g.input(b));
        let o = g.attention(q, k, v, 2, 0.5, Some(b)).unwrap();
        g.value(o).clone()
    };
    let a = run(k.clone(), v.clone(), bias.clone());
    let b = run(permute_rows(&k), permute_rows(&v), bias_p);
    assert_eq!(a.data(), b.data());
}
