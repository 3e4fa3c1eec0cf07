//! Two-stage training: the illumination (shaded) branch first, then the
//! material branches against its frozen shaded context.

use std::path::Path;

use lumitex_geometry::{GeoMaps, Image};
use lumitex_tensor::{Adam, AdamConfig, Checkpoint, Graph, SplitMix64, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{NetConfig, TrainConfig};
use crate::error::{MvpbrError, Result};
use crate::flow::{ContextValues, FlowDraw};
use crate::net::{BranchKind, Condition, Model};
use crate::tokens::images_to_latent;

/// One training scene. Albedo and mr targets are optional; a scene without
/// mr is used by stage 1 only.
#[derive(Clone, Debug)]
pub struct Sample {
    pub name: String,
    pub cond: Condition,
    pub shaded: Tensor,
    pub albedo: Option<Tensor>,
    pub mr: Option<Tensor>,
}

impl Sample {
    pub fn new(
        cfg: &NetConfig,
        name: &str,
        reference: &Image,
        geo: &[GeoMaps],
        shaded: &[Image],
        albedo: Option<&[Image]>,
        mr: Option<&[Image]>,
    ) -> Result<Self> {
        for (what, imgs) in [("shaded", Some(shaded)), ("albedo", albedo), ("mr", mr)] {
            if let Some(imgs) = imgs {
                if imgs.len() != cfg.views {
                    return Err(MvpbrError::Contract(format!("{name}: {} {what} views, expected {}", imgs.len(), cfg.views)));
                }
            }
        }
        Ok(Self {
            name: name.to_string(),
            cond: Condition::new(cfg, reference, geo)?,
            shaded: images_to_latent(shaded, cfg)?,
            albedo: albedo.map(|a| images_to_latent(a, cfg)).transpose()?,
            mr: mr.map(|m| images_to_latent(m, cfg)).transpose()?,
        })
    }

    pub fn has_materials(&self) -> bool {
        self.albedo.is_some() && self.mr.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub stage: u8,
    pub loss: f64,
}

pub fn write_log_csv(path: impl AsRef<Path>, rows: &[LogRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| MvpbrError::io(path, e))
}

pub fn read_log_csv(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(MvpbrError::from)).collect()
}

pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub stage: u8,
    pub rng: SplitMix64,
    pub log: Vec<LogRow>,
    step: usize,
    /// Stage 2 only: shaded context per scene, in dataset order.
    contexts: Vec<Option<ContextValues>>,
}

impl Trainer {
    /// Fresh model with everything but the shaded branch frozen.
    pub fn stage1(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut model = Model::new(&cfg.net, cfg.seed)?;
        model.train_only(&[BranchKind::Shaded]);
        let adam = Adam::new(adam_config(cfg), &model.store);
        Ok(Self {
            model,
            adam,
            stage: 1,
            rng: SplitMix64::new(cfg.seed ^ 0x5EED_0001),
            log: Vec::new(),
            step: 0,
            contexts: Vec::new(),
        })
    }

    /// Continue from a stage-1 checkpoint with the shaded branch frozen.
    pub fn stage2(cfg: &TrainConfig, stage1: Option<&Checkpoint>) -> Result<Self> {
        let ckpt = stage1.ok_or_else(|| MvpbrError::Contract("stage 2 needs a stage-1 checkpoint; run stage 1 first".into()))?;
        if ckpt.meta.get("stage").and_then(|s| s.as_u64()) != Some(1) {
            return Err(MvpbrError::Contract("stage 2 must start from a stage-1 checkpoint".into()));
        }
        cfg.validate()?;
        let mut model = Model::new(&cfg.net, cfg.seed)?;
        ckpt.restore_store(&mut model.store)?;
        model.train_only(&[BranchKind::Albedo, BranchKind::Mr]);
        let adam = Adam::new(adam_config(cfg), &model.store);
        Ok(Self {
            model,
            adam,
            stage: 2,
            rng: SplitMix64::new(cfg.seed ^ 0x5EED_0002),
            log: Vec::new(),
            step: 0,
            contexts: Vec::new(),
        })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One optimizer step on one scene drawn from `data`; returns its loss.
    pub fn step(&mut self, data: &[Sample]) -> Result<f64> {
        let loss = match self.stage {
            1 => self.step_stage1(data)?,
            _ => self.step_stage2(data)?,
        };
        self.log.push(LogRow {
            step: self.step,
            stage: self.stage,
            loss,
        });
        self.step += 1;
        Ok(loss)
    }

    fn step_stage1(&mut self, data: &[Sample]) -> Result<f64> {
        if data.is_empty() {
            return Err(MvpbrError::Contract("empty training set".into()));
        }
        let s = &data[self.rng.below(data.len())];
        let draw = FlowDraw::sample(&mut self.rng, s.shaded.shape());
        let mut g = Graph::new();
        let loss = self.model.branch_loss(&mut g, BranchKind::Shaded, &s.shaded, &draw, &s.cond, None)?;
        self.apply(&mut g, loss)
    }

    fn step_stage2(&mut self, data: &[Sample]) -> Result<f64> {
        let eligible: Vec<usize> = (0..data.len()).filter(|&i| data[i].has_materials()).collect();
        if eligible.is_empty() {
            return Err(MvpbrError::Contract("no scene carries both albedo and mr targets".into()));
        }
        if self.contexts.len() != data.len() {
            self.contexts = vec![None; data.len()];
        }
        let i = eligible[self.rng.below(eligible.len())];
        let s = &data[i];
        if self.contexts[i].is_none() {
            self.contexts[i] = Some(self.model.context_values(&s.shaded, &s.cond)?);
        }
        let ctx_vals = self.contexts[i].as_ref().expect("filled above");
        let mut g = Graph::new();
        let ctx = ctx_vals.to_graph(&mut g);
        let mut total = None;
        for (kind, x1) in [(BranchKind::Albedo, &s.albedo), (BranchKind::Mr, &s.mr)] {
            let x1 = x1.as_ref().expect("eligible scenes carry materials");
            let draw = FlowDraw::sample(&mut self.rng, x1.shape());
            let l = self.model.branch_loss(&mut g, kind, x1, &draw, &s.cond, Some(&ctx))?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        let loss = total.expect("two branches");
        self.apply(&mut g, loss)
    }

    fn apply(&mut self, g: &mut Graph, loss: lumitex_tensor::Var) -> Result<f64> {
        g.backward(loss)?;
        self.model.store.zero_grads();
        g.write_param_grads(&mut self.model.store);
        self.adam.step(&mut self.model.store);
        Ok(g.value(loss).item())
    }

    /// Parameters, frozen flags and optimizer state.
    pub fn checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "stage": self.stage,
            "steps": self.step,
            "net": self.model.cfg,
            "illumination_id": self.model.illumination_id(),
        });
        Checkpoint::from_store(&self.model.store, meta).with_optimizer(&self.adam, &self.model.store)
    }
}

fn adam_config(cfg: &TrainConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    }
}

/// Rebuild a model from any checkpoint written by [`Trainer::checkpoint`].
pub fn model_from_checkpoint(ckpt: &Checkpoint) -> Result<Model> {
    let net: NetConfig = serde_json::from_value(
        ckpt.meta
            .get("net")
            .cloned()
            .ok_or_else(|| MvpbrError::Contract("checkpoint carries no network config".into()))?,
    )?;
    let mut model = Model::new(&net, 0)?;
    ckpt.restore_store(&mut model.store)?;
    Ok(model)
}

/// Loss of one branch on fixed draws (seeded), averaged over scenes.
/// Stage-2 branches use each scene's shaded context.
pub fn probe_loss(model: &Model, data: &[Sample], kind: BranchKind, draws: usize, seed: u64) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut total = 0.0;
    let mut count = 0;
    for s in data {
        let x1 = match kind {
            BranchKind::Shaded => Some(&s.shaded),
            BranchKind::Albedo => s.albedo.as_ref(),
            BranchKind::Mr => s.mr.as_ref(),
        };
        let Some(x1) = x1 else { continue };
        let ctx = match kind {
            BranchKind::Shaded => None,
            _ => Some(model.context_values(&s.shaded, &s.cond)?),
        };
        for _ in 0..draws {
            let draw = FlowDraw::sample(&mut rng, x1.shape());
            let mut g = Graph::new();
            let c = ctx.as_ref().map(|c| c.to_graph(&mut g));
            let l = model.branch_loss(&mut g, kind, x1, &draw, &s.cond, c.as_ref())?;
            total += g.value(l).item();
            count += 1;
        }
    }
    if count == 0 {
        return Err(MvpbrError::Contract(format!("no scene has {} targets", kind.name())));
    }
    Ok(total / count as f64)
}

pub struct TrainOutput {
    pub stage1: Checkpoint,
    pub stage2: Checkpoint,
    pub log: Vec<LogRow>,
}

/// Stage 1 for `stage1_steps`, then stage 2 for `stage2_steps` with the
/// shaded branch frozen. When `out_dir` is given, writes `stage1.ckpt`,
/// `stage2.ckpt`, `train_log.csv` and `train_config.json` there.
pub fn train_two_stage(data: &[Sample], cfg: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainOutput> {
    let mut t1 = Trainer::stage1(cfg)?;
    for _ in 0..cfg.stage1_steps {
        let loss = t1.step(data)?;
        log::debug!("stage 1 step {} loss {loss:.6}", t1.steps_taken());
    }
    let stage1 = t1.checkpoint();
    let mut t2 = Trainer::stage2(cfg, Some(&stage1))?;
    if cfg.stage2_steps > 0 && !data.iter().any(Sample::has_materials) {
        log::warn!("no scene has albedo and mr targets; skipping stage 2");
    } else {
        for _ in 0..cfg.stage2_steps {
            let loss = t2.step(data)?;
            log::debug!("stage 2 step {} loss {loss:.6}", t2.steps_taken());
        }
    }
    let stage2 = t2.checkpoint();
    let mut log = t1.log;
    log.extend(t2.log);
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| MvpbrError::io(dir, e))?;
        stage1.save(dir.join("stage1.ckpt"))?;
        stage2.save(dir.join("stage2.ckpt"))?;
        write_log_csv(dir.join("train_log.csv"), &log)?;
        cfg.save(dir.join("train_config.json"))?;
    }
    Ok(TrainOutput { stage1, stage2, log })
}
