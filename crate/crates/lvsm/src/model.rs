use std::rc::Rc;

use lumitex_geometry::{GeoMaps, Image};
use lumitex_tensor::{Block, Graph, LayerNorm, Linear, ParamId, ParamStore, SplitMix64, Tensor, Var};

use crate::config::LvsmConfig;
use crate::error::{LvsmError, Result};

/// A posed view with its image.
#[derive(Clone, Debug)]
pub struct CondView {
    pub image: Image,
    pub plucker: Image,
    /// Normal then canonical map.
    pub geo: Image,
    pub view: usize,
}

/// A posed view whose image is to be synthesized. There is deliberately no
/// image slot.
#[derive(Clone, Debug)]
pub struct TargetView {
    pub plucker: Image,
    pub geo: Image,
    pub view: usize,
}

impl CondView {
    pub fn new(image: Image, maps: &GeoMaps, view: usize) -> Self {
        Self {
            image,
            plucker: maps.plucker.clone(),
            geo: maps.geometry6(),
            view,
        }
    }
}

impl TargetView {
    pub fn new(maps: &GeoMaps, view: usize) -> Self {
        Self {
            plucker: maps.plucker.clone(),
            geo: maps.geometry6(),
            view,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Condition,
    Target,
}

/// Condition tokens first, then target tokens, each view contributing
/// `per_view` consecutive rows.
#[derive(Clone, Debug)]
pub struct LvsmTokens {
    pub value: Var,
    pub conditions: usize,
    pub targets: usize,
    pub per_view: usize,
    /// Role and view index of each token row.
    pub tags: Vec<(Role, usize)>,
}

impl LvsmTokens {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn target_rows(&self, g: &mut Graph) -> Result<Var> {
        let start = self.conditions * self.per_view;
        Ok(g.slice_rows(self.value, start, self.targets * self.per_view)?)
    }
}

/// `[L, p*p*c]` with values ordered `(dy, dx, channel)` inside a patch.
pub fn patches(img: &Image, patch: usize) -> Result<Tensor> {
    if patch == 0 || img.width % patch != 0 || img.height % patch != 0 {
        return Err(LvsmError::Contract(format!(
            "{}x{} image is not divisible into {patch}x{patch} patches",
            img.width, img.height
        )));
    }
    let (gw, gh) = (img.width / patch, img.height / patch);
    let mut data = Vec::with_capacity(img.data.len());
    for py in 0..gh {
        for px in 0..gw {
            for dy in 0..patch {
                for dx in 0..patch {
                    data.extend_from_slice(img.pixel(px * patch + dx, py * patch + dy));
                }
            }
        }
    }
    Ok(Tensor::new([gw * gh, patch * patch * img.channels], data)?)
}

/// Inverse of [`patches`] for square images.
pub fn from_patches(t: &Tensor, res: usize, patch: usize, channels: usize) -> Result<Image> {
    let grid = res / patch;
    if grid * patch != res || t.rows() != grid * grid || t.cols() != patch * patch * channels {
        return Err(LvsmError::Contract(format!(
            "cannot assemble {:?} into a {res}x{res}x{channels} image",
            t.shape()
        )));
    }
    let mut img = Image::new(res, res, channels);
    for (i, row) in t.data().chunks_exact(t.cols()).enumerate() {
        let (py, px) = (i / grid, i % grid);
        for (j, vals) in row.chunks_exact(channels).enumerate() {
            img.pixel_mut(px * patch + j % patch, py * patch + j / patch).copy_from_slice(vals);
        }
    }
    Ok(img)
}

fn check_res(img: &Image, cfg: &LvsmConfig, channels: usize, what: &str) -> Result<()> {
    if img.width != cfg.image_res || img.height != cfg.image_res || img.channels != channels {
        return Err(LvsmError::Contract(format!(
            "{what} is {}x{}x{}, expected {r}x{r}x{channels}",
            img.width,
            img.height,
            img.channels,
            r = cfg.image_res
        )));
    }
    Ok(())
}

/// Per-patch input rows of a condition view: `[P, G, I]` channel-concatenated.
pub fn cond_patches(c: &CondView, cfg: &LvsmConfig) -> Result<Tensor> {
    check_res(&c.plucker, cfg, 6, "condition Plücker map")?;
    check_res(&c.geo, cfg, 6, "condition geometry")?;
    check_res(&c.image, cfg, cfg.channels, "condition image")?;
    let stacked = Image::concat_channels(&[&c.plucker, &c.geo, &c.image])?;
    patches(&stacked, cfg.patch)
}

/// Per-patch input rows of a target view: `[P, G]`.
pub fn target_patches(t: &TargetView, cfg: &LvsmConfig) -> Result<Tensor> {
    check_res(&t.plucker, cfg, 6, "target Plücker map")?;
    check_res(&t.geo, cfg, 6, "target geometry")?;
    let stacked = Image::concat_channels(&[&t.plucker, &t.geo])?;
    patches(&stacked, cfg.patch)
}

#[derive(Clone, Debug)]
pub struct Lvsm {
    pub cfg: LvsmConfig,
    pub store: ParamStore,
    pub cond_proj: Linear,
    pub target_proj: Linear,
    pub pos: ParamId,
    pub blocks: Vec<Block>,
    pub norm: LayerNorm,
    pub head: Linear,
}

impl Lvsm {
    pub fn new(cfg: &LvsmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = SplitMix64::new(seed);
        let mut ps = ParamStore::new();
        let d = cfg.d;
        let cond_proj = Linear::new(&mut ps, "cond_proj", cfg.cond_dim(), d, &mut rng)?;
        let target_proj = Linear::new(&mut ps, "target_proj", cfg.target_dim(), d, &mut rng)?;
        let pos = ps.add("pos", Tensor::randn([cfg.tokens_per_view(), d], &mut rng).map(|x| 0.02 * x))?;
        let blocks = (0..cfg.depth)
            .map(|i| Block::new(&mut ps, &format!("block{i}"), d, cfg.heads, false, &mut rng))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let norm = LayerNorm::new(&mut ps, "norm", d)?;
        let head = Linear::new(&mut ps, "head", d, cfg.pixel_dim(), &mut rng)?;
        Ok(Self {
            cfg: cfg.clone(),
            store: ps,
            cond_proj,
            target_proj,
            pos,
            blocks,
            norm,
            head,
        })
    }

    /// Project pre-patched inputs (`[n*L, cond_dim]` and `[m*L, target_dim]`).
    pub fn tokenize_patches(&self, g: &mut Graph, cond: &Tensor, target: &Tensor) -> Result<LvsmTokens> {
        let l = self.cfg.tokens_per_view();
        let (cr, tr) = (cond.rows(), target.rows());
        if cr == 0 || tr == 0 || cr % l != 0 || tr % l != 0 {
            return Err(LvsmError::Contract(format!(
                "need at least one condition and one target view of {l} patches, got {cr} and {tr} rows"
            )));
        }
        let (n, m) = (cr / l, tr / l);
        let xc = g.input(cond.clone());
        let xc = self.cond_proj.forward(g, &self.store, xc)?;
        let xt = g.input(target.clone());
        let xt = self.target_proj.forward(g, &self.store, xt)?;
        let value = g.concat_rows(&[xc, xt])?;
        let tags = (0..n)
            .flat_map(|v| std::iter::repeat((Role::Condition, v)).take(l))
            .chain((0..m).flat_map(|v| std::iter::repeat((Role::Target, v)).take(l)))
            .collect();
        Ok(LvsmTokens {
            value,
            conditions: n,
            targets: m,
            per_view: l,
            tags,
        })
    }

    pub fn tokenize(&self, g: &mut Graph, conds: &[CondView], targets: &[TargetView]) -> Result<LvsmTokens> {
        if conds.is_empty() || targets.is_empty() {
            return Err(LvsmError::Contract("tokenize needs at least one condition and one target view".into()));
        }
        let c = conds.iter().map(|c| cond_patches(c, &self.cfg)).collect::<Result<Vec<_>>>()?;
        let t = targets.iter().map(|t| target_patches(t, &self.cfg)).collect::<Result<Vec<_>>>()?;
        let c = Tensor::concat_rows(&c.iter().collect::<Vec<_>>())?;
        let t = Tensor::concat_rows(&t.iter().collect::<Vec<_>>())?;
        self.tokenize_patches(g, &c, &t)
    }

    /// Full self-attention over every token. A zero-depth stack is the
    /// identity.
    pub fn forward(&self, g: &mut Graph, tokens: &LvsmTokens) -> Result<LvsmTokens> {
        if self.blocks.is_empty() {
            return Ok(tokens.clone());
        }
        let (l, d) = (tokens.per_view, self.cfg.d);
        let views = tokens.conditions + tokens.targets;
        let idx: Vec<usize> = (0..views * l * d).map(|i| i % (l * d)).collect();
        let p = g.param(&self.store, self.pos);
        let pos = g.gather(p, Rc::new(idx), &[views * l, d])?;
        let mut x = g.add(tokens.value, pos)?;
        for b in &self.blocks {
            x = b.forward(g, &self.store, x, None)?;
        }
        let x = self.norm.forward(g, &self.store, x)?;
        Ok(LvsmTokens { value: x, ..tokens.clone() })
    }

    /// Affine head from tokens to patch pixels, `[rows, p*p*c]`, unclamped.
    pub fn detokenize_raw(&self, g: &mut Graph, y: Var) -> Result<Var> {
        let rows = g.value(y).rows();
        if rows % self.cfg.tokens_per_view() != 0 {
            return Err(LvsmError::Contract(format!(
                "{rows} tokens are not a whole number of {}-patch views",
                self.cfg.tokens_per_view()
            )));
        }
        self.head.forward(g, &self.store, y).map_err(Into::into)
    }

    /// Target tokens to clamped images, one per view.
    pub fn detokenize(&self, g: &mut Graph, y: Var) -> Result<Vec<Image>> {
        let raw = self.detokenize_raw(g, y)?;
        pixels_to_images(g.value(raw), &self.cfg)
    }

    /// Predicted target patch pixels, `[m*L, p*p*c]`, before clamping.
    pub fn predict(&self, g: &mut Graph, cond: &Tensor, target: &Tensor) -> Result<Var> {
        let tokens = self.tokenize_patches(g, cond, target)?;
        let out = self.forward(g, &tokens)?;
        let yt = out.target_rows(g)?;
        self.detokenize_raw(g, yt)
    }

    /// One forward pass; each output is zeroed outside `masks[i]` when masks
    /// are given. No targets gives no images.
    pub fn synthesize(&self, conds: &[CondView], targets: &[TargetView], masks: Option<&[Image]>) -> Result<Vec<Image>> {
        if targets.is_empty() {
            return Ok(Vec::new());
        }
        if let Some(m) = masks {
            if m.len() != targets.len() {
                return Err(LvsmError::Contract(format!("{} masks for {} targets", m.len(), targets.len())));
            }
        }
        let mut g = Graph::new();
        let tokens = self.tokenize(&mut g, conds, targets)?;
        let out = self.forward(&mut g, &tokens)?;
        let yt = out.target_rows(&mut g)?;
        let mut images = self.detokenize(&mut g, yt)?;
        if let Some(masks) = masks {
            for (img, mask) in images.iter_mut().zip(masks) {
                apply_mask(img, mask)?;
            }
        }
        Ok(images)
    }
}

fn apply_mask(img: &mut Image, mask: &Image) -> Result<()> {
    if mask.width != img.width || mask.height != img.height {
        return Err(LvsmError::Contract("mask resolution differs from the image".into()));
    }
    let c = img.channels;
    for (px, m) in img.data.chunks_exact_mut(c).zip(mask.data.chunks_exact(mask.channels)) {
        if m[0] <= 0.5 {
            px.fill(0.0);
        }
    }
    Ok(())
}

/// `[m*L, p*p*c]` rows to `m` clamped images.
pub fn pixels_to_images(t: &Tensor, cfg: &LvsmConfig) -> Result<Vec<Image>> {
    let l = cfg.tokens_per_view();
    if t.rows() % l != 0 {
        return Err(LvsmError::Contract(format!("{} rows are not a whole number of views", t.rows())));
    }
    (0..t.rows() / l)
        .map(|v| {
            let mut img = from_patches(&t.slice_rows(v * l, l), cfg.image_res, cfg.patch, cfg.channels)?;
            img.clamp01();
            Ok(img)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_round_trip() {
        let mut rng = SplitMix64::new(3);
        let img = Image::from_data(8, 8, 2, (0..128).map(|_| rng.uniform()).collect()).unwrap();
        let t = patches(&img, 4).unwrap();
        assert_eq!(t.shape(), &[4, 32]);
        assert_eq!(from_patches(&t, 8, 4, 2).unwrap(), img);
        assert!(patches(&img, 3).is_err());
    }
}
