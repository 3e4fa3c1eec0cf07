use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LvsmError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvsmConfig {
    pub d: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch: usize,
    pub image_res: usize,
    /// Channels of the synthesized images.
    pub channels: usize,
}

impl Default for LvsmConfig {
    fn default() -> Self {
        Self {
            d: 64,
            depth: 4,
            heads: 4,
            patch: 4,
            image_res: 32,
            channels: 6,
        }
    }
}

/// Plücker (6) plus normal and canonical maps (3 + 3).
pub const GEOMETRY_CHANNELS: usize = 12;

impl LvsmConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LvsmError::Config(m));
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!("d = {} is not divisible by heads = {}", self.d, self.heads));
        }
        if self.patch == 0 || self.image_res == 0 || self.image_res % self.patch != 0 {
            return fail(format!("image_res = {} is not divisible by patch = {}", self.image_res, self.patch));
        }
        if self.channels == 0 {
            return fail("channels must be >= 1".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_res / self.patch
    }

    pub fn tokens_per_view(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn cond_dim(&self) -> usize {
        self.patch * self.patch * (GEOMETRY_CHANNELS + self.channels)
    }

    pub fn target_dim(&self) -> usize {
        self.patch * self.patch * GEOMETRY_CHANNELS
    }

    pub fn pixel_dim(&self) -> usize {
        self.patch * self.patch * self.channels
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvsmTrainConfig {
    pub net: LvsmConfig,
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub steps: usize,
    #[serde(default)]
    pub seed: u64,
    /// Condition views per training step.
    pub conditions: usize,
    /// Target views per training step.
    pub targets: usize,
}

fn default_lr() -> f64 {
    1e-3
}

impl LvsmTrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.conditions == 0 || self.targets == 0 {
            return Err(LvsmError::Config("conditions and targets must both be >= 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(LvsmError::Config(format!("lr = {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| LvsmError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| LvsmError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| LvsmError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims() {
        let c = LvsmConfig::default();
        c.validate().unwrap();
        assert_eq!(c.tokens_per_view(), 64);
        assert_eq!(c.cond_dim(), 16 * 18);
        assert_eq!(c.target_dim(), 16 * 12);
        assert!(LvsmConfig { heads: 5, ..c.clone() }.validate().is_err());
        assert!(LvsmConfig { patch: 3, ..c }.validate().is_err());
    }
}
