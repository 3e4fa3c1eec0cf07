//! Central-difference checks (h = 1e-5, relative error < 1e-4) for every
//! differentiable op, on random inputs in [-1, 1].

use std::rc::Rc;

use lumitex_tensor::gradcheck::check;
use lumitex_tensor::{Graph, RopeTable, SplitMix64, Tensor, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const FLOOR: f64 = 1e-8;

fn inputs(shapes: &[&[usize]], seed: u64) -> Vec<Tensor> {
    let mut rng = SplitMix64::new(seed);
    shapes.iter().map(|s| Tensor::uniform(s.to_vec(), -1.0, 1.0, &mut rng)).collect()
}

/// Reduce an arbitrary tensor to a scalar through a fixed random projection
/// so every output element contributes a distinct weight.
fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let w = Tensor::uniform(g.shape(y).to_vec(), -1.0, 1.0, &mut SplitMix64::new(seed ^ 0xABCD));
    let w = g.input(w);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

fn assert_grad<F>(name: &str, shapes: &[&[usize]], f: F)
where
    F: Fn(&mut Graph, &[Var]) -> lumitex_tensor::Result<Var>,
{
    for seed in 0..3 {
        let ins = inputs(shapes, seed);
        let r = check(&ins, H, FLOOR, |g, v| {
            let y = f(g, v)?;
            Ok(project(g, y, seed))
        })
        .unwrap();
        assert!(r.max_rel_err < TOL || r.max_abs_err < 1e-9, "{name} seed {seed}: {r:?}");
    }
}

#[test]
fn elementwise_ops() {
    assert_grad("add", &[&[3, 4], &[3, 4]], |g, v| g.add(v[0], v[1]));
    assert_grad("sub", &[&[3, 4], &[3, 4]], |g, v| g.sub(v[0], v[1]));
    assert_grad("mul", &[&[3, 4], &[3, 4]], |g, v| g.mul(v[0], v[1]));
    assert_grad("scale", &[&[3, 4]], |g, v| Ok(g.scale(v[0], -2.5)));
    assert_grad("gelu", &[&[3, 4]], |g, v| Ok(g.gelu(v[0])));
    assert_grad("silu", &[&[3, 4]], |g, v| Ok(g.silu(v[0])));
    assert_grad("add_row", &[&[3, 4], &[4]], |g, v| g.add_row(v[0], v[1]));
    assert_grad("mul_row", &[&[3, 4], &[4]], |g, v| g.mul_row(v[0], v[1]));
}

#[test]
fn matrix_ops() {
    assert_grad("matmul", &[&[3, 5], &[5, 2]], |g, v| g.matmul(v[0], v[1]));
    assert_grad("matmul_bt", &[&[3, 5], &[4, 5]], |g, v| g.matmul_bt(v[0], v[1]));
    assert_grad("linear", &[&[2, 3, 5], &[5, 4], &[4]], |g, v| g.linear(v[0], v[1], v[2]));
}

#[test]
fn normalization_ops() {
    assert_grad("layer_norm", &[&[3, 6]], |g, v| g.layer_norm(v[0], 1e-6));
    assert_grad("softmax_rows", &[&[3, 6]], |g, v| Ok(g.softmax_rows(v[0])));
}

#[test]
fn attention_op() {
    assert_grad("attention", &[&[5, 8], &[6, 8], &[6, 8]], |g, v| g.attention(v[0], v[1], v[2], 2, 0.7, None));
    assert_grad("attention+bias", &[&[5, 8], &[6, 8], &[6, 8], &[5, 6]], |g, v| {
        g.attention(v[0], v[1], v[2], 2, 0.7, Some(v[3]))
    });
}

#[test]
fn structural_ops() {
    let table = RopeTable::spatial_2d(&[(0.0, 1.0), (2.0, 3.0), (1.0, 0.0)], 8, 100.0).unwrap();
    assert_grad("rope", &[&[3, 16]], move |g, v| g.rope(v[0], Rc::clone(&table)));
    assert_grad("concat_rows", &[&[2, 3], &[4, 3]], |g, v| g.concat_rows(&[v[0], v[1]]));
    assert_grad("slice_rows", &[&[5, 3]], |g, v| g.slice_rows(v[0], 1, 3));
    let idx = Rc::new(vec![0, 3, 3, 5, 1, 0]);
    assert_grad("gather", &[&[6]], move |g, v| g.gather(v[0], Rc::clone(&idx), &[2, 3]));
    assert_grad("reshape", &[&[2, 6]], |g, v| g.reshape(v[0], &[3, 4]));
    assert_grad("sum", &[&[2, 3]], |g, v| Ok(g.sum(v[0])));
    assert_grad("mean", &[&[2, 3]], |g, v| Ok(g.mean(v[0])));
    assert_grad("mean_square", &[&[2, 3]], |g, v| Ok(g.mean_square(v[0])));
}

#[test]
fn two_layer_mlp_matches_finite_differences() {
    let ins = inputs(&[&[4, 3], &[3, 8], &[8], &[8, 2], &[2]], 77);
    let r = check(&ins, H, FLOOR, |g, v| {
        let h = g.linear(v[0], v[1], v[2])?;
        let h = g.gelu(h);
        let y = g.linear(h, v[3], v[4])?;
        Ok(g.mean_square(y))
    })
    .unwrap();
    assert!(r.max_rel_err < TOL, "{r:?}");
}
