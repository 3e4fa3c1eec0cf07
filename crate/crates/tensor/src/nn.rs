//! Layers built from graph ops. Each layer owns only [`ParamId`]s; values
//! live in a [`ParamStore`] so checkpoints and freezing stay in one place.

use crate::error::{Result, TensorError};
use crate::graph::{Graph, Var};
use crate::param::{ParamId, ParamStore};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

pub const LN_EPS: f64 = 1e-6;

impl Graph {
    /// Affine map along the last axis: `x[*, in] * w[in, out] + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (win, wout) = match self.shape(w) {
            [i, o] => (*i, *o),
            other => {
                return Err(TensorError::Shape {
                    op: "linear",
                    lhs: shape,
                    rhs: other.to_vec(),
                })
            }
        };
        if shape.last() != Some(&win) || self.value(b).numel() != wout {
            return Err(TensorError::Shape {
                op: "linear",
                lhs: shape,
                rhs: vec![win, wout],
            });
        }
        let rows = self.value(x).rows();
        let flat = if shape.len() == 2 { x } else { self.reshape(x, &[rows, win])? };
        let y = self.matmul(flat, w)?;
        let y = self.add_row(y, b)?;
        if shape.len() == 2 {
            Ok(y)
        } else {
            let mut out_shape = shape;
            *out_shape.last_mut().expect("non-empty") = wout;
            self.reshape(y, &out_shape)
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Result<Self> {
        let weight = ps.kaiming(format!("{name}.weight"), fan_in, fan_out, rng)?;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let bias = ps.add(format!("{name}.bias"), Tensor::uniform([fan_out], -bound, bound, rng))?;
        Ok(Self {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(ps, self.weight);
        let b = g.param(ps, self.bias);
        g.linear(x, w, b)
    }
}

/// Layer normalization with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.add(format!("{name}.gamma"), Tensor::ones([d]))?,
            beta: ps.add(format!("{name}.beta"), Tensor::zeros([d]))?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let n = g.layer_norm(x, LN_EPS)?;
        let gamma = g.param(ps, self.gamma);
        let beta = g.param(ps, self.beta);
        let y = g.mul_row(n, gamma)?;
        g.add_row(y, beta)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, hidden: usize, rng: &mut SplitMix64) -> Result<Self> {
        Ok(Self {
            fc1: Linear::new(ps, &format!("{name}.fc1"), d, hidden, rng)?,
            fc2: Linear::new(ps, &format!("{name}.fc2"), hidden, d, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, ps, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, ps, h)
    }
}

/// Multi-head self-attention with separate q/k/v projections.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, rng: &mut SplitMix64) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Contract(format!("width {d} not divisible by {heads} heads")));
        }
        Ok(Self {
            q: Linear::new(ps, &format!("{name}.q"), d, d, rng)?,
            k: Linear::new(ps, &format!("{name}.k"), d, d, rng)?,
            v: Linear::new(ps, &format!("{name}.v"), d, d, rng)?,
            out: Linear::new(ps, &format!("{name}.out"), d, d, rng)?,
            heads,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var) -> Result<Var> {
        let q = self.q.forward(g, ps, x)?;
        let k = self.k.forward(g, ps, x)?;
        let v = self.v.forward(g, ps, x)?;
        let d = g.value(x).cols();
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let a = g.attention(q, k, v, self.heads, scale, None)?;
        self.out.forward(g, ps, a)
    }
}

/// Pre-norm transformer block.
///
/// With `adaptive` set, the norms carry no learned affine part; instead a
/// conditioning vector yields per-block shift/scale/gate rows (DiT-style).
#[derive(Clone, Debug)]
pub struct Block {
    pub attn: SelfAttention,
    pub mlp: Mlp,
    pub norms: Option<(LayerNorm, LayerNorm)>,
    pub ada: Option<Linear>,
}

impl Block {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, heads: usize, adaptive: bool, rng: &mut SplitMix64) -> Result<Self> {
        let attn = SelfAttention::new(ps, &format!("{name}.attn"), d, heads, rng)?;
        let mlp = Mlp::new(ps, &format!("{name}.mlp"), d, 4 * d, rng)?;
        let (norms, ada) = if adaptive {
            (None, Some(Linear::new(ps, &format!("{name}.ada"), d, 6 * d, rng)?))
        } else {
            (
                Some((
                    LayerNorm::new(ps, &format!("{name}.ln1"), d)?,
                    LayerNorm::new(ps, &format!("{name}.ln2"), d)?,
                )),
                None,
            )
        };
        Ok(Self { attn, mlp, norms, ada })
    }

    /// `cond` is the (already activated) conditioning row `[1, d]`; it is
    /// required for adaptive blocks and ignored otherwise.
    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var, cond: Option<Var>) -> Result<Var> {
        match (&self.norms, &self.ada) {
            (Some((ln1, ln2)), _) => {
                let h = ln1.forward(g, ps, x)?;
                let h = self.attn.forward(g, ps, h)?;
                let x = g.add(x, h)?;
                let h = ln2.forward(g, ps, x)?;
                let h = self.mlp.forward(g, ps, h)?;
                g.add(x, h)
            }
            (None, Some(ada)) => {
                let cond = cond.ok_or_else(|| TensorError::Contract("adaptive block needs a conditioning row".into()))?;
                let d = g.value(x).cols();
                let m = ada.forward(g, ps, cond)?;
                let mods: Vec<Var> = (0..6)
                    .map(|i| {
                        let r = g.reshape(m, &[6, d])?;
                        g.slice_rows(r, i, 1)
                    })
                    .collect::<Result<_>>()?;
                let h = modulate(g, x, mods[0], mods[1])?;
                let h = self.attn.forward(g, ps, h)?;
                let h = g.mul_row(h, mods[2])?;
                let x = g.add(x, h)?;
                let h = modulate(g, x, mods[3], mods[4])?;
                let h = self.mlp.forward(g, ps, h)?;
                let h = g.mul_row(h, mods[5])?;
                g.add(x, h)
            }
            (None, None) => unreachable!("block has neither norms nor modulation"),
        }
    }
}

/// `layer_norm(x) * (1 + scale) + shift`, rows broadcast.
pub fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let n = g.layer_norm(x, LN_EPS)?;
    let s = g.mul_row(n, scale)?;
    let y = g.add(n, s)?;
    g.add_row(y, shift)
}

/// Sinusoidal embedding of a scalar in `[0, 1]`, `[1, d]`.
pub fn sinusoidal_embedding(t: f64, d: usize) -> Tensor {
    let half = d / 2;
    let mut out = vec![0.0; d];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let arg = 1000.0 * t * freq;
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Tensor::new([1, d], out).expect("embedding shape")
}
