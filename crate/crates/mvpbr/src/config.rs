use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MvpbrError, Result};

/// Network shape. `views` is N, `l1`/`l2` the fusion and cross-view depths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub d: usize,
    pub views: usize,
    pub l1: usize,
    pub l2: usize,
    pub heads: usize,
    pub patch: usize,
    pub image_res: usize,
    /// Channels of every generated image (shaded, albedo and packed mr).
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_rope_base")]
    pub rope_base: f64,
}

fn default_channels() -> usize {
    3
}

fn default_rope_base() -> f64 {
    100.0
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            d: 64,
            views: 4,
            l1: 2,
            l2: 2,
            heads: 4,
            patch: 4,
            image_res: 32,
            channels: 3,
            rope_base: 100.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(MvpbrError::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if self.head_dim() % 4 != 0 {
            return fail(format!("head_dim = {} must be divisible by 4", self.head_dim()));
        }
        if self.views == 0 {
            return fail("views must be >= 1".into());
        }
        if self.patch == 0 || self.image_res == 0 || self.image_res % self.patch != 0 {
            return fail(format!("image_res = {} is not divisible by patch = {}", self.image_res, self.patch));
        }
        if self.channels == 0 {
            return fail("channels must be >= 1".into());
        }
        if !(self.rope_base > 1.0) {
            return fail(format!("rope_base = {} must exceed 1", self.rope_base));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads.max(1)
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_res / self.patch
    }

    /// Tokens per view, L.
    pub fn tokens_per_view(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Values in one image patch token, `p * p * channels`.
    pub fn patch_dim(&self, channels: usize) -> usize {
        self.patch * self.patch * channels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub net: NetConfig,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-3
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(MvpbrError::Config(format!("lr = {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MvpbrError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| MvpbrError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| MvpbrError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let c = NetConfig::default();
        c.validate().unwrap();
        assert_eq!(c.tokens_per_view(), 64);
        assert_eq!(c.head_dim(), 16);
    }

    #[test]
    fn rejects_bad_shapes() {
        for c in [
            NetConfig { heads: 3, ..Default::default() },
            NetConfig { d: 24, heads: 4, ..Default::default() },
            NetConfig { patch: 5, ..Default::default() },
            NetConfig { views: 0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(MvpbrError::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.json");
        let cfg = TrainConfig {
            net: NetConfig::default(),
            lr: 1e-3,
            stage1_steps: 10,
            stage2_steps: 5,
            seed: 3,
        };
        cfg.save(&p).unwrap();
        assert_eq!(TrainConfig::load(&p).unwrap(), cfg);
        std::fs::write(&p, r#"{"net":{"d":64},"stage1_steps":1,"stage2_steps":1}"#).unwrap();
        assert!(matches!(TrainConfig::load(&p), Err(MvpbrError::Config(_))));
    }
}
