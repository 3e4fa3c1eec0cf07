use std::path::Path;

use lumitex_geometry::{GeoMaps, Image};
use lumitex_tensor::{Adam, AdamConfig, Checkpoint, Graph, SplitMix64, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{LvsmConfig, LvsmTrainConfig};
use crate::error::{LvsmError, Result};
use crate::model::{cond_patches, patches, target_patches, CondView, Lvsm, TargetView};

/// All rendered views of one scene.
#[derive(Clone, Debug)]
pub struct LvsmScene {
    pub name: String,
    pub views: Vec<SceneView>,
}

#[derive(Clone, Debug)]
pub struct SceneView {
    pub image: Image,
    pub maps: GeoMaps,
}

/// Patch rows of one view, computed once.
#[derive(Clone, Debug)]
struct Prepared {
    cond: Tensor,
    target: Tensor,
    pixels: Tensor,
}

fn prepare(scene: &LvsmScene, cfg: &LvsmConfig) -> Result<Vec<Prepared>> {
    scene
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let c = CondView::new(v.image.clone(), &v.maps, i);
            Ok(Prepared {
                cond: cond_patches(&c, cfg)?,
                target: target_patches(&TargetView::new(&v.maps, i), cfg)?,
                pixels: patches(&v.image, cfg.patch)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LvsmLogRow {
    pub step: usize,
    pub loss: f64,
}

pub fn write_lvsm_log(path: impl AsRef<Path>, rows: &[LvsmLogRow]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| LvsmError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| LvsmError::io(path, e))
}

pub fn read_lvsm_log(path: impl AsRef<Path>) -> Result<Vec<LvsmLogRow>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(Into::into)
}

pub struct LvsmTrainer {
    pub model: Lvsm,
    pub adam: Adam,
    pub rng: SplitMix64,
    pub cfg: LvsmTrainConfig,
    pub log: Vec<LvsmLogRow>,
    step: usize,
    data: Vec<Vec<Prepared>>,
}

impl LvsmTrainer {
    /// Scenes with fewer than `conditions + targets` views are skipped.
    pub fn new(cfg: &LvsmTrainConfig, scenes: &[LvsmScene]) -> Result<Self> {
        cfg.validate()?;
        let model = Lvsm::new(&cfg.net, cfg.seed)?;
        let adam = Adam::new(adam_config(cfg), &model.store);
        let data = eligible(cfg, scenes)?;
        Ok(Self {
            model,
            adam,
            rng: SplitMix64::new(cfg.seed ^ 0x1A55_0001),
            cfg: cfg.clone(),
            log: Vec::new(),
            step: 0,
            data,
        })
    }

    /// Continue exactly where `ckpt` stopped.
    pub fn resume(cfg: &LvsmTrainConfig, scenes: &[LvsmScene], ckpt: &Checkpoint) -> Result<Self> {
        let mut t = Self::new(cfg, scenes)?;
        if ckpt.meta.get("net").map(|n| n != &json!(cfg.net)).unwrap_or(true) {
            return Err(LvsmError::Contract("checkpoint was trained with a different network config".into()));
        }
        ckpt.restore_store(&mut t.model.store)?;
        t.adam = ckpt
            .restore_optimizer(adam_config(cfg), &t.model.store)
            .ok_or_else(|| LvsmError::Contract("checkpoint carries no optimizer state".into()))?;
        let meta_u64 = |k: &str| {
            ckpt.meta
                .get(k)
                .and_then(|v| v.as_u64())
                .ok_or_else(|| LvsmError::Contract(format!("checkpoint meta lacks {k}")))
        };
        t.rng = SplitMix64::new(meta_u64("rng_state")?);
        t.step = meta_u64("steps")? as usize;
        Ok(t)
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// One step on a random scene with a random condition/target split. The
    /// conditions are distinct views; the targets are distinct views drawn
    /// from the whole scene, so they can repeat a condition.
    pub fn step(&mut self) -> Result<f64> {
        let (n, m) = (self.cfg.conditions, self.cfg.targets);
        let scene = &self.data[self.rng.below(self.data.len())];
        let mut order: Vec<usize> = (0..scene.len()).collect();
        self.rng.shuffle(&mut order);
        let conds = order[..n].to_vec();
        self.rng.shuffle(&mut order);
        let targets = order[..m].to_vec();

        let cat = |f: &dyn Fn(&Prepared) -> &Tensor, ids: &[usize]| Tensor::concat_rows(&ids.iter().map(|&i| f(&scene[i])).collect::<Vec<_>>());
        let cond = cat(&|p| &p.cond, &conds)?;
        let target = cat(&|p| &p.target, &targets)?;
        let pixels = cat(&|p| &p.pixels, &targets)?;

        let mut g = Graph::new();
        let pred = self.model.predict(&mut g, &cond, &target)?;
        let loss = g.mse(pred, &pixels)?;
        let value = g.value(loss).item();
        g.backward(loss)?;
        self.model.store.zero_grads();
        g.write_param_grads(&mut self.model.store);
        self.adam.step(&mut self.model.store);
        self.log.push(LvsmLogRow { step: self.step, loss: value });
        self.step += 1;
        Ok(value)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let meta = json!({
            "kind": "lvsm",
            "steps": self.step,
            "net": self.cfg.net,
            "rng_state": self.rng.state(),
        });
        Checkpoint::from_store(&self.model.store, meta).with_optimizer(&self.adam, &self.model.store)
    }
}

fn adam_config(cfg: &LvsmTrainConfig) -> AdamConfig {
    AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    }
}

fn eligible(cfg: &LvsmTrainConfig, scenes: &[LvsmScene]) -> Result<Vec<Vec<Prepared>>> {
    let need = cfg.conditions + cfg.targets;
    let mut out = Vec::new();
    for s in scenes {
        if s.views.len() < need {
            log::warn!("skipping scene {}: {} views, need {need}", s.name, s.views.len());
            continue;
        }
        out.push(prepare(s, &cfg.net)?);
    }
    if out.is_empty() {
        return Err(LvsmError::Contract(format!("no scene has the {need} views a training step needs")));
    }
    Ok(out)
}

pub fn lvsm_from_checkpoint(ckpt: &Checkpoint) -> Result<Lvsm> {
    let net: LvsmConfig = ckpt
        .meta
        .get("net")
        .cloned()
        .ok_or_else(|| LvsmError::Contract("checkpoint meta lacks the network config".into()))
        .and_then(|v| serde_json::from_value(v).map_err(Into::into))?;
    let mut model = Lvsm::new(&net, 0)?;
    ckpt.restore_store(&mut model.store)?;
    Ok(model)
}

pub struct LvsmOutput {
    pub checkpoint: Checkpoint,
    pub log: Vec<LvsmLogRow>,
}

/// Train for `cfg.steps`; with `out_dir`, writes `lvsm.ckpt`,
/// `lvsm_log.csv` and `lvsm_config.json`.
pub fn train_lvsm(scenes: &[LvsmScene], cfg: &LvsmTrainConfig, out_dir: Option<&Path>) -> Result<LvsmOutput> {
    let mut t = LvsmTrainer::new(cfg, scenes)?;
    for _ in 0..cfg.steps {
        let loss = t.step()?;
        if t.steps_taken() % 100 == 0 {
            log::info!("lvsm step {} loss {loss:.5}", t.steps_taken());
        }
    }
    let out = LvsmOutput {
        checkpoint: t.checkpoint(),
        log: t.log,
    };
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| LvsmError::io(dir, e))?;
        out.checkpoint.save(dir.join("lvsm.ckpt"))?;
        write_lvsm_log(dir.join("lvsm_log.csv"), &out.log)?;
        cfg.save(dir.join("lvsm_config.json"))?;
    }
    Ok(out)
}
