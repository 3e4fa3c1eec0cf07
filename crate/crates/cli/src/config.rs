//! The single JSON file that drives every stage.

use std::path::{Path, PathBuf};

use lumitex_lvsm::{LvsmConfig, LvsmTrainConfig};
use lumitex_mvpbr::{NetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// OBJ of the object to texture. Relative paths resolve against the
    /// config file's directory.
    pub mesh: PathBuf,
    /// Image prompt, `image_res` square RGB.
    pub reference: PathBuf,
    /// Directory holding a ground-truth atlas for `eval`, if any.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    /// Light rig name used for the reference render and relighting.
    #[serde(default = "default_rig")]
    pub rig: String,
    /// Generated views N (the paper samples 30 at 1024^2).
    pub views: usize,
    /// Inpainted views M.
    pub inpaint_views: usize,
    /// Candidate views K for selection.
    pub candidates: usize,
    pub atlas_res: usize,
    pub image_res: usize,
    #[serde(default)]
    pub camera: CameraConfig,
    #[serde(default)]
    pub dataset: DatasetConfig,
    pub net: NetConfig,
    pub pbr: PbrTraining,
    pub lvsm: LvsmConfig,
    pub lvsm_training: LvsmTraining,
    #[serde(default = "default_sample_steps")]
    pub sample_steps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_selector")]
    pub selector: String,
    #[serde(default = "default_blend")]
    pub blend: String,
    #[serde(default = "default_dilate")]
    pub dilate_radius: usize,
    #[serde(default)]
    pub eval: EvalThresholds,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_threads")]
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub radius: f64,
    /// Vertical field of view in radians.
    pub fov: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self { radius: 4.5, fov: 0.8 }
    }
}

/// Procedural training set. The paper renders ~92K objects; a handful of
/// primitives stands in at toy scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub count: usize,
    /// Resolution of the ground-truth atlases the scenes are rendered from.
    pub atlas_res: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { count: 8, atlas_res: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PbrTraining {
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub stage1_steps: usize,
    pub stage2_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LvsmTraining {
    #[serde(default = "default_lr")]
    pub lr: f64,
    pub steps: usize,
    pub conditions: usize,
    pub targets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalThresholds {
    /// Minimum covered fraction of occupied texels after inpainting.
    pub min_coverage: f64,
    /// Minimum mean relight PSNR against the ground truth, when one is given.
    pub min_psnr: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self {
            min_coverage: 0.95,
            min_psnr: 15.0,
        }
    }
}

fn default_rig() -> String {
    "studio".into()
}
fn default_sample_steps() -> usize {
    32
}
fn default_selector() -> String {
    "greedy".into()
}
fn default_blend() -> String {
    "frontal".into()
}
fn default_dilate() -> usize {
    2
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_threads() -> usize {
    1
}
fn default_lr() -> f64 {
    1e-3
}

fn desk_res(name: &str, r: usize) -> Result<()> {
    if !r.is_power_of_two() || r > 256 {
        return Err(CliError::Config(format!("{name} = {r} must be a power of two <= 256")));
    }
    Ok(())
}

impl PipelineConfig {
    /// Parse, resolve relative input paths against `path`'s directory and
    /// validate. Schema errors name the offending field path.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        let mut cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.mesh, &mut cfg.reference].into_iter().chain(cfg.ground_truth.as_mut()) {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CliError::Config(m));
        if self.views == 0 {
            return fail("views (N) must be >= 1".into());
        }
        if self.candidates < self.inpaint_views {
            return fail(format!(
                "candidates (K = {}) must be >= inpaint_views (M = {})",
                self.candidates, self.inpaint_views
            ));
        }
        desk_res("atlas_res", self.atlas_res)?;
        desk_res("image_res", self.image_res)?;
        desk_res("dataset.atlas_res", self.dataset.atlas_res)?;
        if self.net.views != self.views {
            return fail(format!("net.views = {} must equal views = {}", self.net.views, self.views));
        }
        if self.net.image_res != self.image_res || self.lvsm.image_res != self.image_res {
            return fail(format!("net.image_res and lvsm.image_res must equal image_res = {}", self.image_res));
        }
        if self.net.channels != 3 {
            return fail("net.channels must be 3 (RGB shaded/albedo, packed metallic-roughness)".into());
        }
        if self.lvsm.channels != 6 {
            return fail("lvsm.channels must be 6 (albedo then packed metallic-roughness)".into());
        }
        if !(self.camera.radius > 0.0 && self.camera.fov > 0.0 && self.camera.fov < std::f64::consts::PI) {
            return fail("camera.radius must be positive and camera.fov in (0, pi)".into());
        }
        if self.dataset.count == 0 {
            return fail("dataset.count must be >= 1".into());
        }
        if self.sample_steps == 0 {
            return fail("sample_steps must be >= 1".into());
        }
        if self.threads == 0 {
            return fail("threads must be >= 1".into());
        }
        if !lumitex_relight::preset_rigs().iter().any(|r| r.name == self.rig) {
            return fail(format!("rig {:?} is not a preset rig", self.rig));
        }
        self.net.validate()?;
        self.pbr_train_config().validate()?;
        self.lvsm_train_config().validate()?;
        Ok(())
    }

    pub fn pbr_train_config(&self) -> TrainConfig {
        TrainConfig {
            net: self.net.clone(),
            lr: self.pbr.lr,
            stage1_steps: self.pbr.stage1_steps,
            stage2_steps: self.pbr.stage2_steps,
            seed: self.seed,
        }
    }

    pub fn lvsm_train_config(&self) -> LvsmTrainConfig {
        LvsmTrainConfig {
            net: self.lvsm.clone(),
            lr: self.lvsm_training.lr,
            steps: self.lvsm_training.steps,
            seed: self.seed,
            conditions: self.lvsm_training.conditions,
            targets: self.lvsm_training.targets,
        }
    }

    pub fn light_rig(&self) -> lumitex_relight::LightRig {
        lumitex_relight::preset_rigs()
            .into_iter()
            .find(|r| r.name == self.rig)
            .expect("validated rig name")
    }
}
