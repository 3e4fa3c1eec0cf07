//! Reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each op records its output
//! value and whatever it needs for the backward sweep; [`Graph::backward`]
//! walks the nodes in reverse creation order, which is a valid topological
//! order because inputs always precede outputs.

use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::kernels::{gemm_nn, gemm_nt, gemm_tn};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Precomputed rotation angles for rotary position embedding.
///
/// Row `r` of the table rotates column pair `(2p, 2p + 1)` of every head by
/// `angle[r][p]`.
#[derive(Clone, Debug)]
pub struct RopeTable {
    pub rows: usize,
    pub head_dim: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl RopeTable {
    /// Two-axis table: the first half of each head rotates with the row
    /// coordinate, the second half with the column coordinate.
    pub fn spatial_2d(positions: &[(f64, f64)], head_dim: usize, base: f64) -> Result<Rc<Self>> {
        if head_dim == 0 || head_dim % 4 != 0 {
            return Err(TensorError::Contract(format!(
                "2D rotary embedding needs head_dim divisible by 4, got {head_dim}"
            )));
        }
        let pairs = head_dim / 2;
        let per_axis = pairs / 2;
        let freqs: Vec<f64> = (0..per_axis)
            .map(|i| base.powf(-(i as f64) / per_axis as f64))
            .collect();
        let mut cos = Vec::with_capacity(positions.len() * pairs);
        let mut sin = Vec::with_capacity(positions.len() * pairs);
        for &(row, col) in positions {
            for p in 0..pairs {
                let angle = if p < per_axis {
                    row * freqs[p]
                } else {
                    col * freqs[p - per_axis]
                };
                cos.push(angle.cos());
                sin.push(angle.sin());
            }
        }
        Ok(Rc::new(Self {
            rows: positions.len(),
            head_dim,
            cos,
            sin,
        }))
    }

    /// Apply the rotation (or its inverse) to `x[rows, heads * head_dim]`.
    fn rotate(&self, x: &[f64], cols: usize, inverse: bool) -> Vec<f64> {
        let pairs = self.head_dim / 2;
        let heads = cols / self.head_dim;
        let mut out = vec![0.0; x.len()];
        for r in 0..self.rows {
            let cs = &self.cos[r * pairs..(r + 1) * pairs];
            let sn = &self.sin[r * pairs..(r + 1) * pairs];
            for h in 0..heads {
                let base = r * cols + h * self.head_dim;
                for p in 0..pairs {
                    let (c, s) = (cs[p], if inverse { -sn[p] } else { sn[p] });
                    let a = x[base + 2 * p];
                    let b = x[base + 2 * p + 1];
                    out[base + 2 * p] = a * c - b * s;
                    out[base + 2 * p + 1] = a * s + b * c;
                }
            }
        }
        out
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var },
    MatMulBt { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: f64 },
    AddRow { a: Var, row: Var },
    MulRow { a: Var, row: Var },
    Gelu { a: Var },
    Silu { a: Var },
    LayerNorm { a: Var, rstd: Vec<f64> },
    Softmax { a: Var },
    Attention(Box<AttentionSaved>),
    Rope { a: Var, table: Rc<RopeTable> },
    ConcatRows { parts: Vec<Var> },
    SliceRows { a: Var, start: usize },
    Gather { a: Var, idx: Rc<Vec<usize>> },
    Reshape { a: Var },
    Sum { a: Var },
    Mean { a: Var },
    MeanSquare { a: Var },
}

struct AttentionSaved {
    q: Var,
    k: Var,
    v: Var,
    bias: Option<Var>,
    heads: usize,
    scale: f64,
    /// Softmax weights, `[heads, T, S]`.
    probs: Vec<f64>,
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Input leaf that does receive a gradient (used by gradient checks).
    pub fn input_with_grad(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf bound to a parameter. Repeated calls for the same id return the
    /// same node. Frozen parameters become constants on the tape.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Leaf, !p.frozen);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(shape_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm_nn(m, k, n, ta.data(), tb.data(), &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMul { a, b }, ng))
    }

    /// `a[m,k] * b[n,k]^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[1] {
            return Err(shape_err("matmul_bt", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
        let mut out = vec![0.0; m * n];
        gemm_nt(m, k, n, ta.data(), tb.data(), &mut out);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Tensor::new([m, n], out)?, Op::MatMulBt { a, b }, ng))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Add { a, b }, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Sub { a, b }, ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(t, Op::Mul { a, b }, ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a).map(|x| x * s);
        let ng = self.ng(a);
        self.push(t, Op::Scale { a, s }, ng)
    }

    fn row_check(&self, a: Var, row: Var, name: &'static str) -> Result<()> {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.numel() != ta.cols() {
            return Err(shape_err(name, ta, tr));
        }
        Ok(())
    }

    /// Broadcast-add a `[cols]` (or `[1, cols]`) row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_check(a, row, "add_row")?;
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(tr.data()) {
                *x += b;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(t, Op::AddRow { a, row }, ng))
    }

    /// Broadcast-multiply every row of `a` by a `[cols]` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.row_check(a, row, "mul_row")?;
        let (ta, tr) = (self.value(a), self.value(row));
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            for (x, &b) in chunk.iter_mut().zip(tr.data()) {
                *x *= b;
            }
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(t, Op::MulRow { a, row }, ng))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        let ng = self.ng(a);
        self.push(t, Op::Gelu { a }, ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| x * sigmoid(x));
        let ng = self.ng(a);
        self.push(t, Op::Silu { a }, ng)
    }

    /// Per-row normalization to zero mean and unit variance, no affine part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let ta = self.value(a);
        let c = ta.cols();
        if c < 2 {
            return Err(TensorError::Contract(format!(
                "layer_norm needs at least 2 features, got shape {:?}",
                ta.shape()
            )));
        }
        let mut data = ta.data().to_vec();
        let mut rstds = Vec::with_capacity(ta.rows());
        for chunk in data.chunks_exact_mut(c) {
            let mean = chunk.iter().sum::<f64>() / c as f64;
            let var = chunk.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            for x in chunk.iter_mut() {
                *x = (*x - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::LayerNorm { a, rstd: rstds }, ng))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let c = ta.cols();
        let mut data = ta.data().to_vec();
        for chunk in data.chunks_exact_mut(c) {
            softmax_in_place(chunk);
        }
        let t = Tensor::new(ta.shape().to_vec(), data).expect("same shape");
        let ng = self.ng(a);
        self.push(t, Op::Softmax { a }, ng)
    }

    /// Fused multi-head attention:
    /// `out_h = softmax(scale * q_h k_h^T + bias) v_h` for each head `h`,
    /// where `q[T, H*hd]`, `k[S, H*hd]`, `v[S, H*hd]` and the optional
    /// `bias[T, S]` is shared by all heads.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, scale: f64, bias: Option<Var>) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        let (t_len, d) = (tq.rows(), tq.cols());
        let s_len = tk.rows();
        if tk.cols() != d {
            return Err(shape_err("attention(q,k)", tq, tk));
        }
        if tv.rows() != s_len || tv.cols() != d {
            return Err(shape_err("attention(k,v)", tk, tv));
        }
        if heads == 0 || d % heads != 0 {
            return Err(TensorError::Contract(format!(
                "attention: width {d} not divisible by {heads} heads"
            )));
        }
        if let Some(b) = bias {
            let tb = self.value(b);
            if tb.numel() != t_len * s_len {
                return Err(shape_err("attention(bias)", tq, tb));
            }
        }
        let hd = d / heads;
        let bias_data = bias.map(|b| self.nodes[b.0].value.data());
        // Keys are visited in an order fixed by their content, so permuting
        // the rows of k/v (and the bias columns) permutes nothing in the
        // floating-point reductions and the output is bit-identical.
        let order = key_order(tk.data(), tv.data(), bias_data, t_len, s_len, d);
        let ks: Vec<f64> = order.iter().flat_map(|&j| tk.row(j).iter().copied()).collect();
        let vs: Vec<f64> = order.iter().flat_map(|&j| tv.row(j).iter().copied()).collect();
        let mut out = vec![0.0; t_len * d];
        let mut probs = vec![0.0; heads * t_len * s_len];
        let mut oh = vec![0.0; t_len * hd];
        let mut p = vec![0.0; t_len * s_len];
        for h in 0..heads {
            let qh = head_cols(tq.data(), t_len, d, h, hd);
            let kh = head_cols(&ks, s_len, d, h, hd);
            let vh = head_cols(&vs, s_len, d, h, hd);
            p.iter_mut().for_each(|x| *x = 0.0);
            gemm_nt(t_len, hd, s_len, &qh, &kh, &mut p);
            for x in p.iter_mut() {
                *x *= scale;
            }
            if let Some(bd) = bias_data {
                for (r, row) in p.chunks_exact_mut(s_len).enumerate() {
                    for (x, &j) in row.iter_mut().zip(&order) {
                        *x += bd[r * s_len + j];
                    }
                }
            }
            for row in p.chunks_exact_mut(s_len) {
                softmax_in_place(row);
            }
            oh.iter_mut().for_each(|x| *x = 0.0);
            gemm_nn(t_len, s_len, hd, &p, &vh, &mut oh);
            let dst = &mut probs[h * t_len * s_len..(h + 1) * t_len * s_len];
            for (drow, srow) in dst.chunks_exact_mut(s_len).zip(p.chunks_exact(s_len)) {
                for (&j, &x) in order.iter().zip(srow) {
                    drow[j] = x;
                }
            }
            for r in 0..t_len {
                out[r * d + h * hd..r * d + (h + 1) * hd].copy_from_slice(&oh[r * hd..(r + 1) * hd]);
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v) || bias.is_some_and(|b| self.ng(b));
        let saved = AttentionSaved {
            q,
            k,
            v,
            bias,
            heads,
            scale,
            probs,
        };
        Ok(self.push(Tensor::new([t_len, d], out)?, Op::Attention(Box::new(saved)), ng))
    }

    /// Softmax weights recorded by an attention node, `[heads, T, S]`.
    pub fn attention_weights(&self, v: Var) -> Option<&[f64]> {
        match &self.nodes[v.0].op {
            Op::Attention(s) => Some(&s.probs),
            _ => None,
        }
    }

    pub fn rope(&mut self, a: Var, table: Rc<RopeTable>) -> Result<Var> {
        let ta = self.value(a);
        if ta.rows() != table.rows || ta.cols() % table.head_dim != 0 {
            return Err(TensorError::Contract(format!(
                "rope table for {} rows x head_dim {} does not fit shape {:?}",
                table.rows,
                table.head_dim,
                ta.shape()
            )));
        }
        let data = table.rotate(ta.data(), ta.cols(), false);
        let t = Tensor::new(ta.shape().to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Rope { a, table }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let t = Tensor::concat_rows(&tensors)?;
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(t, Op::ConcatRows { parts: parts.to_vec() }, ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if start + len > ta.rows() {
            return Err(TensorError::Contract(format!(
                "slice_rows {start}..{} out of range for shape {:?}",
                start + len,
                ta.shape()
            )));
        }
        let t = ta.slice_rows(start, len);
        let ng = self.ng(a);
        Ok(self.push(t, Op::SliceRows { a, start }, ng))
    }

    /// `out.flat[i] = a.flat[idx[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, idx: Rc<Vec<usize>>, shape: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= ta.numel()) {
            return Err(TensorError::Contract(format!(
                "gather index {bad} out of range for {} elements",
                ta.numel()
            )));
        }
        let data = idx.iter().map(|&i| ta.data()[i]).collect();
        let t = Tensor::new(shape.to_vec(), data)?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Gather { a, idx }, ng))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let ng = self.ng(a);
        Ok(self.push(t, Op::Reshape { a }, ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let t = Tensor::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(t, Op::Sum { a }, ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::scalar(ta.sum() / ta.numel() as f64);
        let ng = self.ng(a);
        self.push(t, Op::Mean { a }, ng)
    }

    /// Mean of squared elements.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::scalar(ta.data().iter().map(|x| x * x).sum::<f64>() / ta.numel() as f64);
        let ng = self.ng(a);
        self.push(t, Op::MeanSquare { a }, ng)
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        let t = self.input(target.clone());
        let diff = self.sub(pred, t)?;
        Ok(self.mean_square(diff))
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the right shape if nothing flowed into it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape().to_vec()))
    }

    /// Populate gradients for every node reachable from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::new(self.value(loss).shape().to_vec(), vec![1.0])?);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(gout) = grads[i].take() else { continue };
            self.backprop_node(i, &gout, &mut grads)?;
            grads[i] = Some(gout);
        }
        self.grads = grads;
        Ok(())
    }

    /// Copy accumulated parameter gradients into the store. Frozen
    /// parameters, and parameters the loss did not reach, get zero grads.
    pub fn write_param_grads(&self, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            let g = if store.get(id).frozen {
                Tensor::zeros(self.value(v).shape().to_vec())
            } else {
                self.grad_or_zeros(v)
            };
            store.get_mut(id).grad = g;
        }
    }

    fn backprop_node(&self, i: usize, gout: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[i];
        let g = gout.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nt(m, n, k, g, tb.data(), &mut da);
                    self.acc(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm_tn(m, k, n, ta.data(), g, &mut db);
                    self.acc(grads, *b, db);
                }
            }
            Op::MatMulBt { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[0]);
                if self.ng(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm_nn(m, n, k, g, tb.data(), &mut da);
                    self.acc(grads, *a, da);
                }
                if self.ng(*b) {
                    let mut db = vec![0.0; n * k];
                    gemm_tn(m, n, k, g, ta.data(), &mut db);
                    self.acc(grads, *b, db);
                }
            }
            Op::Add { a, b } => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.to_vec());
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.to_vec());
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.iter().map(|x| -x).collect());
                }
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    self.acc(grads, *a, g.iter().zip(tb.data()).map(|(x, y)| x * y).collect());
                }
                if self.ng(*b) {
                    self.acc(grads, *b, g.iter().zip(ta.data()).map(|(x, y)| x * y).collect());
                }
            }
            Op::Scale { a, s } => {
                self.acc(grads, *a, g.iter().map(|x| x * s).collect());
            }
            Op::AddRow { a, row } => {
                if self.ng(*a) {
                    self.acc(grads, *a, g.to_vec());
                }
                if self.ng(*row) {
                    let c = self.value(*a).cols();
                    let mut dr = vec![0.0; c];
                    for chunk in g.chunks_exact(c) {
                        for (d, &x) in dr.iter_mut().zip(chunk) {
                            *d += x;
                        }
                    }
                    self.acc(grads, *row, dr);
                }
            }
            Op::MulRow { a, row } => {
                let (ta, tr) = (self.value(*a), self.value(*row));
                let c = ta.cols();
                if self.ng(*a) {
                    let mut da = g.to_vec();
                    for chunk in da.chunks_exact_mut(c) {
                        for (d, &r) in chunk.iter_mut().zip(tr.data()) {
                            *d *= r;
                        }
                    }
                    self.acc(grads, *a, da);
                }
                if self.ng(*row) {
                    let mut dr = vec![0.0; c];
                    for (gc, ac) in g.chunks_exact(c).zip(ta.data().chunks_exact(c)) {
                        for ((d, &x), &y) in dr.iter_mut().zip(gc).zip(ac) {
                            *d += x * y;
                        }
                    }
                    self.acc(grads, *row, dr);
                }
            }
            Op::Gelu { a } => {
                let ta = self.value(*a);
                self.acc(grads, *a, g.iter().zip(ta.data()).map(|(&d, &x)| d * gelu_grad(x)).collect());
            }
            Op::Silu { a } => {
                let ta = self.value(*a);
                let da = g
                    .iter()
                    .zip(ta.data())
                    .map(|(&d, &x)| {
                        let s = sigmoid(x);
                        d * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                self.acc(grads, *a, da);
            }
            Op::LayerNorm { a, rstd } => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut da = vec![0.0; y.len()];
                for (r, &rs) in rstd.iter().enumerate() {
                    let yr = &y[r * c..(r + 1) * c];
                    let gr = &g[r * c..(r + 1) * c];
                    let mean_g = gr.iter().sum::<f64>() / c as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        da[r * c + j] = rs * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::Softmax { a } => {
                let y = node.value.data();
                let c = node.value.cols();
                let mut da = vec![0.0; y.len()];
                for ((dr, yr), gr) in da.chunks_exact_mut(c).zip(y.chunks_exact(c)).zip(g.chunks_exact(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc(grads, *a, da);
            }
            Op::Attention(s) => self.backprop_attention(s, g, grads),
            Op::Rope { a, table } => {
                let c = node.value.cols();
                self.acc(grads, *a, table.rotate(g, c, true));
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    if self.ng(p) {
                        self.acc(grads, p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::SliceRows { a, start } => {
                let ta = self.value(*a);
                let c = ta.cols();
                let mut da = vec![0.0; ta.numel()];
                da[start * c..start * c + g.len()].copy_from_slice(g);
                self.acc(grads, *a, da);
            }
            Op::Gather { a, idx } => {
                let mut da = vec![0.0; self.value(*a).numel()];
                for (&j, &x) in idx.iter().zip(g) {
                    da[j] += x;
                }
                self.acc(grads, *a, da);
            }
            Op::Reshape { a } => self.acc(grads, *a, g.to_vec()),
            Op::Sum { a } => {
                let n = self.value(*a).numel();
                self.acc(grads, *a, vec![g[0]; n]);
            }
            Op::Mean { a } => {
                let n = self.value(*a).numel();
                self.acc(grads, *a, vec![g[0] / n as f64; n]);
            }
            Op::MeanSquare { a } => {
                let ta = self.value(*a);
                let k = 2.0 * g[0] / ta.numel() as f64;
                self.acc(grads, *a, ta.data().iter().map(|x| k * x).collect());
            }
        }
        Ok(())
    }

    fn backprop_attention(&self, s: &AttentionSaved, g: &[f64], grads: &mut [Option<Tensor>]) {
        let (tq, tk, tv) = (self.value(s.q), self.value(s.k), self.value(s.v));
        let (t_len, d) = (tq.rows(), tq.cols());
        let s_len = tk.rows();
        let hd = d / s.heads;
        let mut dq = vec![0.0; t_len * d];
        let mut dk = vec![0.0; s_len * d];
        let mut dv = vec![0.0; s_len * d];
        let mut dbias = s.bias.map(|_| vec![0.0; t_len * s_len]);
        for h in 0..s.heads {
            let qh = head_cols(tq.data(), t_len, d, h, hd);
            let kh = head_cols(tk.data(), s_len, d, h, hd);
            let vh = head_cols(tv.data(), s_len, d, h, hd);
            let goh = head_cols(g, t_len, d, h, hd);
            let p = &s.probs[h * t_len * s_len..(h + 1) * t_len * s_len];
            // dV = P^T dO
            let mut dvh = vec![0.0; s_len * hd];
            gemm_tn(t_len, s_len, hd, p, &goh, &mut dvh);
            // dP = dO V^T, then through the softmax.
            let mut dl = vec![0.0; t_len * s_len];
            gemm_nt(t_len, hd, s_len, &goh, &vh, &mut dl);
            for (dr, pr) in dl.chunks_exact_mut(s_len).zip(p.chunks_exact(s_len)) {
                let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                for (x, &pp) in dr.iter_mut().zip(pr) {
                    *x = pp * (*x - dot);
                }
            }
            if let Some(db) = dbias.as_mut() {
                for (a, &b) in db.iter_mut().zip(&dl) {
                    *a += b;
                }
            }
            let mut dqh = vec![0.0; t_len * hd];
            gemm_nn(t_len, s_len, hd, &dl, &kh, &mut dqh);
            let mut dkh = vec![0.0; s_len * hd];
            gemm_tn(t_len, s_len, hd, &dl, &qh, &mut dkh);
            for r in 0..t_len {
                for j in 0..hd {
                    dq[r * d + h * hd + j] = s.scale * dqh[r * hd + j];
                }
            }
            for r in 0..s_len {
                for j in 0..hd {
                    dk[r * d + h * hd + j] = s.scale * dkh[r * hd + j];
                    dv[r * d + h * hd + j] = dvh[r * hd + j];
                }
            }
        }
        if self.ng(s.q) {
            self.acc(grads, s.q, dq);
        }
        if self.ng(s.k) {
            self.acc(grads, s.k, dk);
        }
        if self.ng(s.v) {
            self.acc(grads, s.v, dv);
        }
        if let (Some(b), Some(db)) = (s.bias, dbias) {
            if self.ng(b) {
                self.acc(grads, b, db);
            }
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, delta: Vec<f64>) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => {
                for (a, b) in t.data_mut().iter_mut().zip(&delta) {
                    *a += b;
                }
            }
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(Tensor::new(shape, delta).expect("gradient shape matches value"));
            }
        }
    }
}

/// Key indices sorted by (k row, v row, bias column), compared bitwise
/// through `total_cmp`.
fn key_order(k: &[f64], v: &[f64], bias: Option<&[f64]>, t_len: usize, s_len: usize, d: usize) -> Vec<usize> {
    let cmp_rows = |x: &[f64], y: &[f64]| {
        x.iter()
            .zip(y)
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    };
    let mut order: Vec<usize> = (0..s_len).collect();
    order.sort_by(|&a, &b| {
        cmp_rows(&k[a * d..(a + 1) * d], &k[b * d..(b + 1) * d])
            .then_with(|| cmp_rows(&v[a * d..(a + 1) * d], &v[b * d..(b + 1) * d]))
            .then_with(|| match bias {
                Some(bd) => (0..t_len)
                    .map(|r| bd[r * s_len + a].total_cmp(&bd[r * s_len + b]))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal),
                None => std::cmp::Ordering::Equal,
            })
    });
    order
}

fn head_cols(x: &[f64], rows: usize, d: usize, h: usize, hd: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * hd);
    for r in 0..rows {
        out.extend_from_slice(&x[r * d + h * hd..r * d + (h + 1) * hd]);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in row.iter_mut() {
        *x /= sum;
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}
