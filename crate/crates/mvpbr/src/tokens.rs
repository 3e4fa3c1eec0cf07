//! Patch tokens and the image/geometry embedders.

use lumitex_geometry::{GeoMaps, Image};
use lumitex_tensor::{Graph, Linear, ParamStore, SplitMix64, Tensor, Var};

use crate::config::NetConfig;
use crate::error::{MvpbrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tag {
    Image,
    Geometry,
    Material,
    Latent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenInfo {
    pub tag: Tag,
    pub view: usize,
    pub row: usize,
    pub col: usize,
}

/// `views * per_view` tokens stored row-major as a `[views * per_view, d]`
/// graph value, view-major.
#[derive(Clone, Debug)]
pub struct TokenSet {
    pub value: Var,
    pub views: usize,
    pub per_view: usize,
    pub info: Vec<TokenInfo>,
}

impl TokenSet {
    pub fn new(g: &Graph, value: Var, views: usize, per_view: usize, info: Vec<TokenInfo>) -> Result<Self> {
        let rows = g.value(value).rows();
        if rows != views * per_view || info.len() != rows {
            return Err(MvpbrError::Contract(format!(
                "token set of {rows} rows and {} tags does not split into {views} x {per_view}",
                info.len()
            )));
        }
        if let Some(bad) = info.iter().find(|i| i.view >= views) {
            return Err(MvpbrError::Contract(format!("token tagged with view {} of {views}", bad.view)));
        }
        Ok(Self {
            value,
            views,
            per_view,
            info,
        })
    }

    /// One tag per token over a `grid x grid` patch layout, repeated per view.
    pub fn grid(g: &Graph, value: Var, tag: Tag, views: usize, grid: usize) -> Result<Self> {
        let info = grid_info(tag, views, grid);
        Self::new(g, value, views, grid * grid, info)
    }

    /// `[N, L, d]`.
    pub fn shape(&self, g: &Graph) -> [usize; 3] {
        [self.views, self.per_view, g.value(self.value).cols()]
    }

    pub fn expect_tag(&self, tag: Tag) -> Result<()> {
        match self.info.iter().find(|i| i.tag != tag) {
            Some(i) => Err(MvpbrError::Contract(format!("expected {tag:?} tokens, found a {:?} token", i.tag))),
            None => Ok(()),
        }
    }

    pub fn view_of(&self) -> Vec<usize> {
        self.info.iter().map(|i| i.view).collect()
    }
}

pub fn grid_info(tag: Tag, views: usize, grid: usize) -> Vec<TokenInfo> {
    let mut out = Vec::with_capacity(views * grid * grid);
    for view in 0..views {
        for row in 0..grid {
            for col in 0..grid {
                out.push(TokenInfo { tag, view, row, col });
            }
        }
    }
    out
}

/// `[L, p*p*c]`, patches row-major, values within a patch ordered
/// `(dy, dx, channel)`.
pub fn patchify(img: &Image, patch: usize) -> Result<Tensor> {
    if patch == 0 || img.width % patch != 0 || img.height % patch != 0 {
        return Err(MvpbrError::Config(format!(
            "{}x{} image is not divisible into {patch}x{patch} patches",
            img.width, img.height
        )));
    }
    let (gw, gh, c) = (img.width / patch, img.height / patch, img.channels);
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
    Ok(Tensor::new([gw * gh, patch * patch * c], data)?)
}

/// Inverse of [`patchify`] for a square image.
pub fn unpatchify(t: &Tensor, res: usize, patch: usize, channels: usize) -> Result<Image> {
    let grid = res / patch;
    if grid * patch != res || t.rows() != grid * grid || t.cols() != patch * patch * channels {
        return Err(MvpbrError::Contract(format!(
            "cannot unpatchify {:?} into a {res}x{res}x{channels} image with patch {patch}",
            t.shape()
        )));
    }
    let mut img = Image::new(res, res, channels);
    for (i, row) in t.data().chunks_exact(t.cols()).enumerate() {
        let (py, px) = (i / grid, i % grid);
        for (j, px_vals) in row.chunks_exact(channels).enumerate() {
            let (dy, dx) = (j / patch, j % patch);
            img.pixel_mut(px * patch + dx, py * patch + dy).copy_from_slice(px_vals);
        }
    }
    Ok(img)
}

/// Images in `[0, 1]` become latents in `[-1, 1]`, stacked view-major.
pub fn images_to_latent(images: &[Image], cfg: &NetConfig) -> Result<Tensor> {
    let parts = images
        .iter()
        .map(|img| {
            check_res(img, cfg)?;
            patchify(&img.map(|x| 2.0 * x - 1.0), cfg.patch)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?)
}

/// Inverse of [`images_to_latent`], clamped to `[0, 1]`.
pub fn latent_to_images(latent: &Tensor, cfg: &NetConfig) -> Result<Vec<Image>> {
    let l = cfg.tokens_per_view();
    if latent.rows() % l != 0 {
        return Err(MvpbrError::Contract(format!("{} latent rows is not a multiple of L = {l}", latent.rows())));
    }
    (0..latent.rows() / l)
        .map(|v| {
            let mut img = unpatchify(&latent.slice_rows(v * l, l), cfg.image_res, cfg.patch, cfg.channels)?.map(|x| 0.5 * (x + 1.0));
            img.clamp01();
            Ok(img)
        })
        .collect()
}

fn check_res(img: &Image, cfg: &NetConfig) -> Result<()> {
    if img.width != cfg.image_res || img.height != cfg.image_res {
        return Err(MvpbrError::Config(format!(
            "image is {}x{}, network expects {}x{}",
            img.width, img.height, cfg.image_res, cfg.image_res
        )));
    }
    if cfg.image_res % cfg.patch != 0 {
        return Err(MvpbrError::Config(format!(
            "resolution {} is not divisible by patch {}",
            cfg.image_res, cfg.patch
        )));
    }
    Ok(())
}

/// Patchified normal ⊕ canonical maps of every view, `[N*L, p*p*6]`.
pub fn geo_patches(geo: &[GeoMaps], cfg: &NetConfig) -> Result<Tensor> {
    let parts = geo
        .iter()
        .map(|m| {
            check_res(&m.normal, cfg)?;
            patchify(&Image::concat_channels(&[&m.normal, &m.canonical])?, cfg.patch)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?)
}

pub fn image_patches(img: &Image, cfg: &NetConfig) -> Result<Tensor> {
    check_res(img, cfg)?;
    patchify(img, cfg.patch)
}

#[derive(Clone, Debug)]
pub struct GeoEncoder {
    pub proj: Linear,
}

impl GeoEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &NetConfig, rng: &mut SplitMix64) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(ps, &format!("{name}.geo"), cfg.patch_dim(6), cfg.d, rng)?,
        })
    }

    /// `patches` from [`geo_patches`]; returns `[N, L, d]` geometry tokens.
    pub fn encode(&self, g: &mut Graph, ps: &ParamStore, cfg: &NetConfig, patches: &Tensor) -> Result<TokenSet> {
        let l = cfg.tokens_per_view();
        if patches.cols() != cfg.patch_dim(6) || patches.rows() % l != 0 {
            return Err(MvpbrError::Contract(format!("geometry patches {:?} do not fit the network", patches.shape())));
        }
        let x = g.input(patches.clone());
        let y = self.proj.forward(g, ps, x)?;
        TokenSet::grid(g, y, Tag::Geometry, patches.rows() / l, cfg.grid())
    }
}

pub fn encode_geo_tokens(
    g: &mut Graph,
    ps: &ParamStore,
    enc: &GeoEncoder,
    cfg: &NetConfig,
    geo: &[GeoMaps],
) -> Result<TokenSet> {
    enc.encode(g, ps, cfg, &geo_patches(geo, cfg)?)
}

/// Two independent patch embedders over the same grid, stacked along the
/// token axis and passed through a shared projection.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    pub embed_a: Linear,
    pub embed_b: Linear,
    pub proj: Linear,
}

impl ImageEncoder {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &NetConfig, rng: &mut SplitMix64) -> Result<Self> {
        let pd = cfg.patch_dim(cfg.channels);
        Ok(Self {
            embed_a: Linear::new(ps, &format!("{name}.img_a"), pd, cfg.d, rng)?,
            embed_b: Linear::new(ps, &format!("{name}.img_b"), pd, cfg.d, rng)?,
            proj: Linear::new(ps, &format!("{name}.img_proj"), cfg.d, cfg.d, rng)?,
        })
    }

    /// `patches` from [`image_patches`]; returns `[1, 2L, d]`.
    pub fn encode(&self, g: &mut Graph, ps: &ParamStore, cfg: &NetConfig, patches: &Tensor) -> Result<TokenSet> {
        if patches.cols() != cfg.patch_dim(cfg.channels) || patches.rows() != cfg.tokens_per_view() {
            return Err(MvpbrError::Contract(format!("image patches {:?} do not fit the network", patches.shape())));
        }
        let x = g.input(patches.clone());
        let a = self.embed_a.forward(g, ps, x)?;
        let b = self.embed_b.forward(g, ps, x)?;
        let cat = g.concat_rows(&[a, b])?;
        let y = self.proj.forward(g, ps, cat)?;
        let mut info = grid_info(Tag::Image, 1, cfg.grid());
        info.extend(grid_info(Tag::Image, 1, cfg.grid()));
        TokenSet::new(g, y, 1, 2 * cfg.tokens_per_view(), info)
    }
}

pub fn encode_img_tokens(
    g: &mut Graph,
    ps: &ParamStore,
    enc: &ImageEncoder,
    cfg: &NetConfig,
    reference: &Image,
) -> Result<TokenSet> {
    enc.encode(g, ps, cfg, &image_patches(reference, cfg)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patchify_round_trip() {
        let mut rng = SplitMix64::new(1);
        let img = Image::from_data(8, 8, 3, (0..192).map(|_| rng.uniform()).collect()).unwrap();
        let t = patchify(&img, 4).unwrap();
        assert_eq!(t.shape(), &[4, 48]);
        assert_eq!(unpatchify(&t, 8, 4, 3).unwrap(), img);
        // Second patch starts at pixel (4, 0).
        assert_eq!(&t.row(1)[..3], img.pixel(4, 0));
        assert!(patchify(&img, 3).is_err());
    }

    #[test]
    fn latent_round_trip() {
        let cfg = NetConfig {
            image_res: 8,
            patch: 4,
            ..Default::default()
        };
        let img = Image::filled(8, 8, &[0.25, 0.5, 1.0]);
        let lat = images_to_latent(&[img.clone(), img.clone()], &cfg).unwrap();
        assert_eq!(lat.rows(), 8);
        assert_eq!(latent_to_images(&lat, &cfg).unwrap(), vec![img.clone(), img]);
    }

    #[test]
    fn token_set_checks_views() {
        let mut g = Graph::new();
        let v = g.input(Tensor::zeros([4, 2]));
        let mut info = grid_info(Tag::Latent, 1, 2);
        assert!(TokenSet::new(&g, v, 1, 4, info.clone()).is_ok());
        info[3].view = 1;
        assert!(TokenSet::new(&g, v, 1, 4, info).is_err());
        assert!(TokenSet::grid(&g, v, Tag::Latent, 2, 2).is_err());
    }
}
