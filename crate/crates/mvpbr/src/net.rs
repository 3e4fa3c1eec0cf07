//! Fusion and cross-view transformer stacks, illumination attention, the
//! shaded-guided material attention and the three generation branches.

use std::rc::Rc;

use lumitex_geometry::{GeoMaps, Image};
use lumitex_tensor::nn::sinusoidal_embedding;
use lumitex_tensor::{Block, Graph, LayerNorm, Linear, ParamId, ParamStore, RopeTable, SplitMix64, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::NetConfig;
use crate::error::{MvpbrError, Result};
use crate::tokens::{geo_patches, image_patches, GeoEncoder, ImageEncoder, Tag, TokenSet};

/// Per view `i`, run `blocks` over `[z_i; img; geo_i; e]` and keep the
/// first L rows. Views never see each other.
#[allow(clippy::too_many_arguments)]
pub fn mm_forward(
    g: &mut Graph,
    ps: &ParamStore,
    blocks: &[Block],
    z: &TokenSet,
    img: &TokenSet,
    geo: &TokenSet,
    e: Var,
    cond: Option<Var>,
) -> Result<TokenSet> {
    z.expect_tag(Tag::Latent)?;
    img.expect_tag(Tag::Image)?;
    geo.expect_tag(Tag::Geometry)?;
    let l = z.per_view;
    if geo.views != z.views || geo.per_view != l || img.views != 1 || img.per_view != 2 * l {
        return Err(MvpbrError::Contract(format!(
            "mm_forward: latents {}x{l}, image {}x{}, geometry {}x{}",
            z.views, img.views, img.per_view, geo.views, geo.per_view
        )));
    }
    if g.value(e).numel() != g.value(z.value).cols() {
        return Err(MvpbrError::Contract("mm_forward: material embedding width differs from tokens".into()));
    }
    if blocks.is_empty() {
        return Ok(z.clone());
    }
    let e = g.reshape(e, &[1, g.value(z.value).cols()])?;
    let mut outs = Vec::with_capacity(z.views);
    for i in 0..z.views {
        let zi = g.slice_rows(z.value, i * l, l)?;
        let gi = g.slice_rows(geo.value, i * l, l)?;
        let mut x = g.concat_rows(&[zi, img.value, gi, e])?;
        for b in blocks {
            x = b.forward(g, ps, x, cond)?;
        }
        outs.push(g.slice_rows(x, 0, l)?);
    }
    let value = g.concat_rows(&outs)?;
    TokenSet::new(g, value, z.views, l, z.info.clone())
}

/// Full attention over all `N * L` tokens.
pub fn mv_forward(g: &mut Graph, ps: &ParamStore, blocks: &[Block], z: &TokenSet, cond: Option<Var>) -> Result<TokenSet> {
    let mut x = z.value;
    for b in blocks {
        x = b.forward(g, ps, x, cond)?;
    }
    TokenSet::new(g, x, z.views, z.per_view, z.info.clone())
}

/// Flat index into the `[N, N, N]` bias table for query view `t`.
pub fn phi_index(views: usize, t: usize, vi: usize, vj: usize) -> usize {
    (t * views + vi) * views + vj
}

/// `s_i = sum_j softmax_j(q_i k_j^T / sqrt(hd) + phi[t, view(i), view(j)]) v_j`
/// with the spatial rotary table applied to `q` and `k` first.
#[allow(clippy::too_many_arguments)]
pub fn illum_attention(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    phi: Var,
    view_of: &[usize],
    views: usize,
    t: usize,
    heads: usize,
    rope: &Rc<RopeTable>,
) -> Result<Var> {
    if t >= views {
        return Err(MvpbrError::Contract(format!("query view {t} out of range for {views} views")));
    }
    let n = view_of.len();
    if g.value(phi).numel() != views * views * views || view_of.iter().any(|&x| x >= views) {
        return Err(MvpbrError::Contract("illum_attention: bias table or view map does not match the view count".into()));
    }
    let idx: Vec<usize> = view_of
        .iter()
        .flat_map(|&vi| view_of.iter().map(move |&vj| phi_index(views, t, vi, vj)))
        .collect();
    let bias = g.gather(phi, Rc::new(idx), &[n, n])?;
    let q = g.rope(q, rope.clone())?;
    let k = g.rope(k, rope.clone())?;
    let hd = g.value(q).cols() / heads;
    Ok(g.attention(q, k, v, heads, 1.0 / (hd as f64).sqrt(), Some(bias))?)
}

/// Residual illumination-attention layer. Each view's queries use the bias
/// slice of their own view index.
#[derive(Clone, Debug)]
pub struct IllumAttention {
    pub norm: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub phi: ParamId,
    pub views: usize,
    pub heads: usize,
}

impl IllumAttention {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &NetConfig, rng: &mut SplitMix64) -> Result<Self> {
        let d = cfg.d;
        let n = cfg.views;
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), d)?,
            q: Linear::new(ps, &format!("{name}.q"), d, d, rng)?,
            k: Linear::new(ps, &format!("{name}.k"), d, d, rng)?,
            v: Linear::new(ps, &format!("{name}.v"), d, d, rng)?,
            out: Linear::new(ps, &format!("{name}.out"), d, d, rng)?,
            phi: ps.add(format!("{name}.phi"), Tensor::zeros([n * n * n]))?,
            views: n,
            heads: cfg.heads,
        })
    }

    /// Raw attention output for every token with query view `t`.
    pub fn attend(&self, g: &mut Graph, ps: &ParamStore, s: &TokenSet, rope: &Rc<RopeTable>, t: usize) -> Result<Var> {
        let q = self.q.forward(g, ps, s.value)?;
        let k = self.k.forward(g, ps, s.value)?;
        let v = self.v.forward(g, ps, s.value)?;
        let phi = g.param(ps, self.phi);
        illum_attention(g, q, k, v, phi, &s.view_of(), self.views, t, self.heads, rope)
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, s: &TokenSet, rope: &Rc<RopeTable>) -> Result<TokenSet> {
        let (n, l) = (s.views, s.per_view);
        if n != self.views {
            return Err(MvpbrError::Contract(format!("illumination layer built for {} views, got {n}", self.views)));
        }
        let h = self.norm.forward(g, ps, s.value)?;
        let q = self.q.forward(g, ps, h)?;
        let k = self.k.forward(g, ps, h)?;
        let v = self.v.forward(g, ps, h)?;
        let q = g.rope(q, rope.clone())?;
        let k = g.rope(k, rope.clone())?;
        let phi = g.param(ps, self.phi);
        let hd = g.value(q).cols() / self.heads;
        let view_of = s.view_of();
        let mut outs = Vec::with_capacity(n);
        for t in 0..n {
            let qt = g.slice_rows(q, t * l, l)?;
            let idx: Vec<usize> = (0..l)
                .flat_map(|_| view_of.iter().map(move |&vj| phi_index(n, t, t, vj)))
                .collect();
            let bias = g.gather(phi, Rc::new(idx), &[l, n * l])?;
            outs.push(g.attention(qt, k, v, self.heads, 1.0 / (hd as f64).sqrt(), Some(bias))?);
        }
        let a = g.concat_rows(&outs)?;
        let a = self.out.forward(g, ps, a)?;
        let value = g.add(s.value, a)?;
        TokenSet::new(g, value, n, l, s.info.clone())
    }
}

/// Shaded keys and values shared by both material branches.
#[derive(Clone, Debug)]
pub struct ShadedContext {
    pub k: Var,
    pub v: Var,
    /// Identifier of the frozen illumination parameters that produced `S`.
    pub provenance: String,
}

/// `K = S W_K`, `V = S W_V` with `[d, d]` weights and no bias.
pub fn shaded_kv(g: &mut Graph, ps: &ParamStore, wk: ParamId, wv: ParamId, s: Var, provenance: &str) -> Result<ShadedContext> {
    let wk = g.param(ps, wk);
    let wv = g.param(ps, wv);
    Ok(ShadedContext {
        k: g.matmul(s, wk)?,
        v: g.matmul(s, wv)?,
        provenance: provenance.to_string(),
    })
}

/// `softmax(Q K^T / sqrt(d)) V` against the shaded context.
pub fn material_cross_attention(g: &mut Graph, q: Var, ctx: &ShadedContext) -> Result<Var> {
    let d = g.value(q).cols();
    if g.value(ctx.k).cols() != d || g.value(ctx.v).cols() != d {
        return Err(MvpbrError::Contract(format!(
            "material attention: queries have width {d}, shaded context has {}",
            g.value(ctx.k).cols()
        )));
    }
    Ok(g.attention(q, ctx.k, ctx.v, 1, 1.0 / (d as f64).sqrt(), None)?)
}

#[derive(Clone, Debug)]
pub struct CrossLayer {
    pub norm: LayerNorm,
    pub q: Linear,
    pub out: Linear,
}

impl CrossLayer {
    pub fn new(ps: &mut ParamStore, name: &str, d: usize, rng: &mut SplitMix64) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), d)?,
            q: Linear::new(ps, &format!("{name}.q"), d, d, rng)?,
            out: Linear::new(ps, &format!("{name}.out"), d, d, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, ps: &ParamStore, x: Var, ctx: &ShadedContext) -> Result<Var> {
        let h = self.norm.forward(g, ps, x)?;
        let q = self.q.forward(g, ps, h)?;
        let a = material_cross_attention(g, q, ctx)?;
        let a = self.out.forward(g, ps, a)?;
        Ok(g.add(x, a)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Shaded,
    Albedo,
    Mr,
}

impl BranchKind {
    pub const ALL: [BranchKind; 3] = [BranchKind::Shaded, BranchKind::Albedo, BranchKind::Mr];

    pub fn name(self) -> &'static str {
        match self {
            BranchKind::Shaded => "shaded",
            BranchKind::Albedo => "albedo",
            BranchKind::Mr => "mr",
        }
    }
}

/// Patchified conditions of one scene.
#[derive(Clone, Debug)]
pub struct Condition {
    /// Reference image patches, `[L, p*p*ch]`.
    pub reference: Tensor,
    /// Normal ⊕ canonical patches, `[N*L, p*p*6]`.
    pub geo: Tensor,
}

impl Condition {
    pub fn new(cfg: &NetConfig, reference: &Image, geo: &[GeoMaps]) -> Result<Self> {
        if geo.len() != cfg.views {
            return Err(MvpbrError::Contract(format!("{} geometry views for a {}-view network", geo.len(), cfg.views)));
        }
        if reference.channels != cfg.channels {
            return Err(MvpbrError::Contract(format!(
                "reference image has {} channels, network expects {}",
                reference.channels, cfg.channels
            )));
        }
        Ok(Self {
            reference: image_patches(reference, cfg)?,
            geo: geo_patches(geo, cfg)?,
        })
    }
}

pub struct BranchOut {
    /// Predicted clean latents, `[N*L, p*p*ch]`.
    pub x1: Var,
    /// Token states after the head norm, `[N*L, d]`.
    pub states: Var,
}

/// One generation branch: its own embedders, material embedding, fusion and
/// cross-view stacks, and either the illumination layer (shaded) or the
/// shaded-guided cross attention (albedo, mr).
#[derive(Clone, Debug)]
pub struct Branch {
    pub kind: BranchKind,
    pub geo: GeoEncoder,
    pub img: ImageEncoder,
    pub latent_in: Linear,
    pub pos: ParamId,
    pub e: ParamId,
    pub t_fc1: Linear,
    pub t_fc2: Linear,
    pub mm: Vec<Block>,
    pub mv: Vec<Block>,
    pub illum: Option<IllumAttention>,
    pub cross: Option<CrossLayer>,
    pub head_norm: LayerNorm,
    pub head: Linear,
}

impl Branch {
    pub fn new(ps: &mut ParamStore, kind: BranchKind, cfg: &NetConfig, rng: &mut SplitMix64) -> Result<Self> {
        let name = kind.name();
        let d = cfg.d;
        let pd = cfg.patch_dim(cfg.channels);
        let geo = GeoEncoder::new(ps, name, cfg, rng)?;
        let img = ImageEncoder::new(ps, name, cfg, rng)?;
        let latent_in = Linear::new(ps, &format!("{name}.latent_in"), pd, d, rng)?;
        let pos = ps.add(format!("{name}.pos"), Tensor::randn([cfg.tokens_per_view(), d], rng).map(|x| 0.02 * x))?;
        let e = ps.add(format!("{name}.e"), Tensor::randn([1, d], rng).map(|x| 0.02 * x))?;
        let t_fc1 = Linear::new(ps, &format!("{name}.t_fc1"), d, d, rng)?;
        let t_fc2 = Linear::new(ps, &format!("{name}.t_fc2"), d, d, rng)?;
        let mm = (0..cfg.l1)
            .map(|i| Block::new(ps, &format!("{name}.mm{i}"), d, cfg.heads, true, rng))
            .collect::<lumitex_tensor::Result<Vec<_>>>()?;
        let mv = (0..cfg.l2)
            .map(|i| Block::new(ps, &format!("{name}.mv{i}"), d, cfg.heads, true, rng))
            .collect::<lumitex_tensor::Result<Vec<_>>>()?;
        let (illum, cross) = match kind {
            BranchKind::Shaded => (Some(IllumAttention::new(ps, &format!("{name}.illum"), cfg, rng)?), None),
            _ => (None, Some(CrossLayer::new(ps, &format!("{name}.cross"), d, rng)?)),
        };
        let head_norm = LayerNorm::new(ps, &format!("{name}.head_norm"), d)?;
        let head = Linear::new(ps, &format!("{name}.head"), d, pd, rng)?;
        Ok(Self {
            kind,
            geo,
            img,
            latent_in,
            pos,
            e,
            t_fc1,
            t_fc2,
            mm,
            mv,
            illum,
            cross,
            head_norm,
            head,
        })
    }

    /// Position rows repeated `copies` times.
    fn tiled_pos(&self, g: &mut Graph, ps: &ParamStore, copies: usize) -> Result<Var> {
        let p = g.param(ps, self.pos);
        Ok(g.concat_rows(&vec![p; copies])?)
    }

    /// Predict clean latents from `x_t` at time `t`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &self,
        g: &mut Graph,
        ps: &ParamStore,
        cfg: &NetConfig,
        rope: &Rc<RopeTable>,
        x_t: Var,
        t: f64,
        cond: &Condition,
        ctx: Option<&ShadedContext>,
    ) -> Result<BranchOut> {
        let n = cfg.views;
        let emb = g.input(sinusoidal_embedding(t, cfg.d));
        let h = self.t_fc1.forward(g, ps, emb)?;
        let h = g.silu(h);
        let temb = self.t_fc2.forward(g, ps, h)?;
        let c = g.silu(temb);

        let z = self.latent_in.forward(g, ps, x_t)?;
        let pos_n = self.tiled_pos(g, ps, n)?;
        let z = g.add(z, pos_n)?;
        let z = g.add_row(z, temb)?;
        let z = TokenSet::grid(g, z, Tag::Latent, n, cfg.grid())?;

        let geo = self.geo.encode(g, ps, cfg, &cond.geo)?;
        let gv = g.add(geo.value, pos_n)?;
        let geo = TokenSet { value: gv, ..geo };
        let img = self.img.encode(g, ps, cfg, &cond.reference)?;
        let pos2 = self.tiled_pos(g, ps, 2)?;
        let iv = g.add(img.value, pos2)?;
        let img = TokenSet { value: iv, ..img };

        let e = g.param(ps, self.e);
        let z = mm_forward(g, ps, &self.mm, &z, &img, &geo, e, Some(c))?;
        let z = mv_forward(g, ps, &self.mv, &z, Some(c))?;
        let states = match (&self.illum, &self.cross, ctx) {
            (Some(illum), _, _) => illum.forward(g, ps, &z, rope)?.value,
            (None, Some(cross), Some(ctx)) => cross.forward(g, ps, z.value, ctx)?,
            (None, Some(_), None) => {
                return Err(MvpbrError::Contract(format!("{} branch needs the shaded context", self.kind.name())))
            }
            (None, None, _) => unreachable!("branch without attention layer"),
        };
        let states = self.head_norm.forward(g, ps, states)?;
        let x1 = self.head.forward(g, ps, states)?;
        Ok(BranchOut { x1, states })
    }
}

/// Spatial rotary table for `views` copies of the patch grid.
pub fn spatial_rope(cfg: &NetConfig, views: usize) -> Result<Rc<RopeTable>> {
    let grid = cfg.grid();
    let positions: Vec<(f64, f64)> = (0..views)
        .flat_map(|_| (0..grid * grid).map(move |i| ((i / grid) as f64, (i % grid) as f64)))
        .collect();
    Ok(RopeTable::spatial_2d(&positions, cfg.head_dim(), cfg.rope_base)?)
}

/// All three branches plus the shared shaded key/value projections.
pub struct Model {
    pub cfg: NetConfig,
    pub store: ParamStore,
    pub shaded: Branch,
    pub albedo: Branch,
    pub mr: Branch,
    pub ctx_k: ParamId,
    pub ctx_v: ParamId,
    pub rope: Rc<RopeTable>,
}

pub const SHADED_PREFIX: &str = "shaded.";

impl Model {
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut store = ParamStore::new();
        let shaded = Branch::new(&mut store, BranchKind::Shaded, cfg, &mut rng)?;
        let albedo = Branch::new(&mut store, BranchKind::Albedo, cfg, &mut rng)?;
        let mr = Branch::new(&mut store, BranchKind::Mr, cfg, &mut rng)?;
        let ctx_k = store.kaiming("material.ctx_k", cfg.d, cfg.d, &mut rng)?;
        let ctx_v = store.kaiming("material.ctx_v", cfg.d, cfg.d, &mut rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            store,
            shaded,
            albedo,
            mr,
            ctx_k,
            ctx_v,
            rope: spatial_rope(cfg, cfg.views)?,
        })
    }

    pub fn branch(&self, kind: BranchKind) -> &Branch {
        match kind {
            BranchKind::Shaded => &self.shaded,
            BranchKind::Albedo => &self.albedo,
            BranchKind::Mr => &self.mr,
        }
    }

    pub fn forward(&self, g: &mut Graph, kind: BranchKind, x_t: Var, t: f64, cond: &Condition, ctx: Option<&ShadedContext>) -> Result<BranchOut> {
        self.branch(kind).forward(g, &self.store, &self.cfg, &self.rope, x_t, t, cond, ctx)
    }

    /// Shaded context from the illumination branch evaluated on clean
    /// shaded latents at `t = 1`.
    pub fn shaded_context(&self, g: &mut Graph, shaded: &Tensor, cond: &Condition) -> Result<ShadedContext> {
        let x = g.input(shaded.clone());
        let out = self.forward(g, BranchKind::Shaded, x, 1.0, cond, None)?;
        shaded_kv(g, &self.store, self.ctx_k, self.ctx_v, out.states, &self.illumination_id())
    }

    /// FNV-1a over the illumination branch's parameter bits.
    pub fn illumination_id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for p in self.store.iter().filter(|p| p.name.starts_with(SHADED_PREFIX)) {
            for b in p.name.bytes().chain(p.value.data().iter().flat_map(|x| x.to_bits().to_le_bytes())) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        format!("{h:016x}")
    }

    /// Freeze everything except the named branch set.
    pub fn train_only(&mut self, kinds: &[BranchKind]) {
        let prefixes: Vec<String> = kinds.iter().map(|k| format!("{}.", k.name())).collect();
        let material = kinds.iter().any(|k| *k != BranchKind::Shaded);
        for p in self.store.iter_mut() {
            let trainable = prefixes.iter().any(|pre| p.name.starts_with(pre.as_str())) || (material && p.name.starts_with("material."));
            p.frozen = !trainable;
        }
    }
}
