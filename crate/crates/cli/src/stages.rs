//! One [`Stage`] per subcommand. Each reads only the artifacts of the stages
//! it names and writes only under its own directory of `out_dir`:
//!
//! ```text
//! dataset/   scenes.json, scene_NNN/...          gen-dataset
//! geo/       cameras.json, candidates.json,
//!            view_NN_*.png                        render-geo
//! pbr/       stage1.ckpt, stage2.ckpt,
//!            train_log.csv, train_config.json     train-pbr
//! lvsm/      lvsm.ckpt, lvsm_log.csv,
//!            lvsm_config.json                     train-lvsm
//! infer/     view_NN_{shaded,albedo,mr}.png,
//!            infer.json                           infer
//! select/    selected.json, selection.json        select-views
//! inpaint/   view_NN_{albedo,mr}.png              inpaint
//! bake/      before/, atlas/, coverage.json       bake
//! relight/   view_NN_{baked,truth}.png,
//!            metrics.csv                          relight
//! eval/      eval.json                            eval
//! ```

use std::path::{Path, PathBuf};

use lumitex_bake::{
    bake_with, blend_registry, coverage_report, greedy_select, seam_dilate, selector_registry, BakeView, CoverageReport, CoverageState,
    Registry, TextureAtlas, ViewGain,
};
use lumitex_geometry::camera::{load_cameras, save_cameras};
use lumitex_geometry::{fibonacci_views, rasterize, BitDepth, GeoMaps, Image, TriMesh, ViewSpec, DEFAULT_GRAZING_CUTOFF};
use lumitex_lvsm::{lvsm_from_checkpoint, train_lvsm, CondView, TargetView};
use lumitex_mvpbr::{model_from_checkpoint, train_two_stage, Condition};
use lumitex_relight::{psnr_masked, render_relit, write_metrics_csv, MetricRow};
use lumitex_tensor::Checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::dataset::{self, Rig};
use crate::error::{CliError, Result};

/// Everything a stage may look at.
#[derive(Clone, Debug)]
pub struct Context {
    pub cfg: PipelineConfig,
    pub out: PathBuf,
    pub seed: u64,
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> Self {
        Self {
            out: cfg.out_dir.clone(),
            seed: cfg.seed,
            cfg,
        }
    }

    /// Output directory of the named stage.
    pub fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage_dir(stage))
    }

    fn fresh_dir(&self, stage: &str) -> Result<PathBuf> {
        let d = self.dir(stage);
        std::fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
        Ok(d)
    }

    /// Path of an upstream artifact, or a stage-order error naming the stage
    /// that produces it.
    fn need(&self, stage: &'static str, producer: &'static str, rel: &str) -> Result<PathBuf> {
        let p = self.dir(producer).join(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(CliError::StageOrder {
                stage,
                missing: p,
                run_first: producer,
            })
        }
    }

    fn mesh(&self) -> Result<TriMesh> {
        if !self.cfg.mesh.exists() {
            return Err(CliError::Config(format!("mesh {} does not exist", self.cfg.mesh.display())));
        }
        Ok(TriMesh::load_obj(&self.cfg.mesh)?)
    }
}

pub fn stage_dir(stage: &str) -> &str {
    match stage {
        "gen-dataset" => "dataset",
        "render-geo" => "geo",
        "train-pbr" => "pbr",
        "train-lvsm" => "lvsm",
        "select-views" => "select",
        other => other,
    }
}

pub trait Stage {
    fn name(&self) -> &'static str;
    fn run(&self, ctx: &Context) -> Result<()>;
}

/// Pipeline order.
pub const ORDER: [&str; 10] = [
    "gen-dataset",
    "render-geo",
    "train-pbr",
    "train-lvsm",
    "infer",
    "select-views",
    "inpaint",
    "bake",
    "relight",
    "eval",
];

pub fn stage_registry() -> Registry<dyn Stage> {
    let mut r: Registry<dyn Stage> = Registry::new("stage");
    let stages: Vec<Box<dyn Stage>> = vec![
        Box::new(GenDataset),
        Box::new(RenderGeo),
        Box::new(TrainPbr),
        Box::new(TrainLvsm),
        Box::new(Infer),
        Box::new(SelectViews),
        Box::new(Inpaint),
        Box::new(Bake),
        Box::new(Relight),
        Box::new(Eval),
    ];
    for s in stages {
        r.register(s.name(), s);
    }
    r
}

pub fn run_stage(name: &str, ctx: &Context) -> Result<()> {
    let reg = stage_registry();
    let stage = reg.get(name).map_err(|e| CliError::Config(e.to_string()))?;
    log::info!("running {name}");
    stage.run(ctx)
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)?).map_err(|e| CliError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn stem(i: usize) -> String {
    format!("view_{i:02}")
}

fn save16(img: &Image, path: PathBuf) -> Result<()> {
    Ok(img.save_png(path, BitDepth::Sixteen)?)
}

fn load_geo(dir: &Path, n: usize) -> Result<Vec<GeoMaps>> {
    (0..n).map(|i| Ok(GeoMaps::load_pngs(dir, &stem(i))?)).collect()
}

fn load_images(dir: &Path, n: usize, kind: &str) -> Result<Vec<Image>> {
    (0..n).map(|i| Ok(Image::load_png(dir.join(format!("{}_{kind}.png", stem(i))))?)).collect()
}

pub struct GenDataset;

impl Stage for GenDataset {
    fn name(&self) -> &'static str {
        "gen-dataset"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let cfg = &ctx.cfg;
        let scenes = dataset::generate(cfg.dataset.count, ctx.seed, cfg.dataset.atlas_res, &Rig::from_config(cfg)?);
        let dir = ctx.fresh_dir(self.name())?;
        dataset::write_dataset(&dir, &scenes, ctx.seed)?;
        log::info!("wrote {} scenes to {}", scenes.len(), dir.display());
        Ok(())
    }
}

pub struct RenderGeo;

impl Stage for RenderGeo {
    fn name(&self) -> &'static str {
        "render-geo"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let mesh = ctx.mesh()?;
        let rig = Rig::from_config(&ctx.cfg)?;
        let dir = ctx.fresh_dir(self.name())?;
        for (i, v) in rig.generation.iter().enumerate() {
            rasterize(&mesh, v).save_pngs(&dir, &stem(i))?;
        }
        save_cameras(dir.join("cameras.json"), &rig.generation)?;
        save_cameras(dir.join("candidates.json"), &rig.candidates)?;
        Ok(())
    }
}

pub struct TrainPbr;

impl Stage for TrainPbr {
    fn name(&self) -> &'static str {
        "train-pbr"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let index = ctx.need(self.name(), "gen-dataset", dataset::INDEX_FILE)?;
        let scenes = dataset::load_dataset(index.parent().expect("index has a parent"))?;
        let cfg = ctx.cfg.pbr_train_config();
        let cfg = lumitex_mvpbr::TrainConfig { seed: ctx.seed, ..cfg };
        let samples = scenes.iter().map(|s| s.pbr_sample(&cfg.net)).collect::<Result<Vec<_>>>()?;
        let out = train_two_stage(&samples, &cfg, Some(&ctx.fresh_dir(self.name())?))?;
        log::info!("train-pbr: final loss {:?}", out.log.last().map(|r| r.loss));
        Ok(())
    }
}

pub struct TrainLvsm;

impl Stage for TrainLvsm {
    fn name(&self) -> &'static str {
        "train-lvsm"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let index = ctx.need(self.name(), "gen-dataset", dataset::INDEX_FILE)?;
        let scenes = dataset::load_dataset(index.parent().expect("index has a parent"))?;
        let lvsm_scenes: Vec<_> = scenes.iter().map(|s| s.lvsm_scene()).collect();
        let cfg = lumitex_lvsm::LvsmTrainConfig {
            seed: ctx.seed,
            ..ctx.cfg.lvsm_train_config()
        };
        train_lvsm(&lvsm_scenes, &cfg, Some(&ctx.fresh_dir(self.name())?))?;
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct InferRecord {
    views: usize,
    steps: usize,
    seed: u64,
    /// Fingerprint of the frozen illumination branch used for sampling.
    illumination_id: String,
}

pub struct Infer;

impl Stage for Infer {
    fn name(&self) -> &'static str {
        "infer"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let ckpt = ctx.need(self.name(), "train-pbr", "stage2.ckpt")?;
        let geo_dir = ctx.need(self.name(), "render-geo", "cameras.json")?;
        let model = model_from_checkpoint(&Checkpoint::load(ckpt)?)?;
        let n = ctx.cfg.views;
        let geo = load_geo(geo_dir.parent().expect("geo dir"), n)?;
        if !ctx.cfg.reference.exists() {
            return Err(CliError::Config(format!("reference image {} does not exist", ctx.cfg.reference.display())));
        }
        let reference = Image::load_png(&ctx.cfg.reference)?;
        let cond = Condition::new(&model.cfg, &reference, &geo)?;
        let out = model.generate(&cond, ctx.cfg.sample_steps, ctx.seed)?;
        let dir = ctx.fresh_dir(self.name())?;
        for i in 0..n {
            for (img, kind) in [(&out.shaded[i], "shaded"), (&out.albedo[i], "albedo"), (&out.mr[i], "mr")] {
                save16(img, dir.join(format!("{}_{kind}.png", stem(i))))?;
            }
        }
        let record = InferRecord {
            views: n,
            steps: ctx.cfg.sample_steps,
            seed: ctx.seed,
            illumination_id: model.illumination_id(),
        };
        write_json(&dir.join("infer.json"), &record)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionRecord {
    /// Indices into the candidate set, in pick order.
    pub picks: Vec<usize>,
    pub before: CoverageReport,
    pub after: CoverageReport,
}

pub struct SelectViews;

impl Stage for SelectViews {
    fn name(&self) -> &'static str {
        "select-views"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let geo = ctx.need(self.name(), "render-geo", "candidates.json")?;
        let candidates = load_cameras(&geo)?;
        let initial = load_cameras(geo.with_file_name("cameras.json"))?;
        let mesh = ctx.mesh()?;
        let selectors = selector_registry();
        let selector = selectors.get(&ctx.cfg.selector).map_err(|e| CliError::Config(e.to_string()))?;
        let sel = greedy_select(&mesh, &candidates, &initial, ctx.cfg.inpaint_views, ctx.cfg.atlas_res, selector)?;
        let dir = ctx.fresh_dir(self.name())?;
        // Reindex the picked cameras as views N.. so downstream file names
        // do not collide with the generated views.
        let n = initial.len();
        let views: Vec<ViewSpec> = sel
            .views
            .iter()
            .enumerate()
            .map(|(j, v)| ViewSpec { index: n + j, ..v.clone() })
            .collect();
        save_cameras(dir.join("selected.json"), &views)?;
        let record = SelectionRecord {
            picks: sel.picks.iter().map(|p| p.candidate).collect(),
            before: coverage_report(&sel.before, &[]),
            after: coverage_report(&sel.after, &sel.gains()),
        };
        write_json(&dir.join("selection.json"), &record)
    }
}

pub struct Inpaint;

impl Stage for Inpaint {
    fn name(&self) -> &'static str {
        "inpaint"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let ckpt = ctx.need(self.name(), "train-lvsm", "lvsm.ckpt")?;
        let infer = ctx.need(self.name(), "infer", "infer.json")?;
        let selected = ctx.need(self.name(), "select-views", "selected.json")?;
        let model = lvsm_from_checkpoint(&Checkpoint::load(ckpt)?)?;
        let n = ctx.cfg.views;
        let infer_dir = infer.parent().expect("infer dir");
        let geo = load_geo(&ctx.dir("render-geo"), n)?;
        let albedo = load_images(infer_dir, n, "albedo")?;
        let mr = load_images(infer_dir, n, "mr")?;
        let conds = (0..n)
            .map(|i| Ok(CondView::new(Image::concat_channels(&[&albedo[i], &mr[i]])?, &geo[i], i)))
            .collect::<Result<Vec<_>>>()?;
        let mesh = ctx.mesh()?;
        let views = load_cameras(&selected)?;
        let target_geo: Vec<GeoMaps> = views.iter().map(|v| rasterize(&mesh, v)).collect();
        let targets: Vec<TargetView> = target_geo.iter().zip(&views).map(|(g, v)| TargetView::new(g, v.index)).collect();
        let masks: Vec<Image> = target_geo.iter().map(|g| g.mask.clone()).collect();
        let images = model.synthesize(&conds, &targets, Some(&masks))?;
        let dir = ctx.fresh_dir(self.name())?;
        for (img, v) in images.iter().zip(&views) {
            save16(&img.select_channels(0, 3), dir.join(format!("{}_albedo.png", stem(v.index))))?;
            save16(&img.select_channels(3, 3), dir.join(format!("{}_mr.png", stem(v.index))))?;
        }
        Ok(())
    }
}

fn coverage_of(mesh: &TriMesh, res: usize, views: &[ViewSpec]) -> CoverageReport {
    let mut state = CoverageState::new(mesh, res);
    let gains: Vec<ViewGain> = views.iter().map(|v| ViewGain { view: v.index, gain: state.add_view(mesh, v) }).collect();
    coverage_report(&state, &gains)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BakeRecord {
    /// Generated views only.
    pub before: CoverageReport,
    /// Generated plus inpainted views.
    pub after: CoverageReport,
}

pub struct Bake;

impl Stage for Bake {
    fn name(&self) -> &'static str {
        "bake"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let infer = ctx.need(self.name(), "infer", "infer.json")?;
        let selected = ctx.need(self.name(), "select-views", "selected.json")?;
        let generated = load_cameras(ctx.need(self.name(), "render-geo", "cameras.json")?)?;
        let chosen = load_cameras(&selected)?;
        if !chosen.is_empty() {
            ctx.need(self.name(), "inpaint", &format!("{}_albedo.png", stem(chosen[0].index)))?;
        }
        let n = generated.len();
        let infer_dir = infer.parent().expect("infer dir");
        let (ga, gm) = (load_images(infer_dir, n, "albedo")?, load_images(infer_dir, n, "mr")?);
        let inpaint_dir = ctx.dir("inpaint");
        let mut ia = Vec::new();
        let mut im = Vec::new();
        for v in &chosen {
            ia.push(Image::load_png(inpaint_dir.join(format!("{}_albedo.png", stem(v.index))))?);
            im.push(Image::load_png(inpaint_dir.join(format!("{}_mr.png", stem(v.index))))?);
        }
        let mesh = ctx.mesh()?;
        let blends = blend_registry();
        let blend = blends.get(&ctx.cfg.blend).map_err(|e| CliError::Config(e.to_string()))?;
        let res = ctx.cfg.atlas_res;
        let bake_views = |views: &[&ViewSpec], a: &[&Image], m: &[&Image]| -> Result<TextureAtlas> {
            let bv: Vec<BakeView> = (0..views.len())
                .map(|i| BakeView {
                    view: views[i],
                    albedo: a[i],
                    mr: m[i],
                })
                .collect();
            let atlas = bake_with(&mesh, &bv, res, blend, DEFAULT_GRAZING_CUTOFF)?;
            Ok(seam_dilate(&atlas, &lumitex_geometry::occupancy(&mesh, res), ctx.cfg.dilate_radius))
        };
        let gen_views: Vec<&ViewSpec> = generated.iter().collect();
        let all_views: Vec<&ViewSpec> = generated.iter().chain(&chosen).collect();
        let before = bake_views(&gen_views, &ga.iter().collect::<Vec<_>>(), &gm.iter().collect::<Vec<_>>())?;
        let after = bake_views(
            &all_views,
            &ga.iter().chain(&ia).collect::<Vec<_>>(),
            &gm.iter().chain(&im).collect::<Vec<_>>(),
        )?;
        let dir = ctx.fresh_dir(self.name())?;
        for (atlas, sub) in [(&before, "before"), (&after, "atlas")] {
            let d = dir.join(sub);
            std::fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
            atlas.save_pngs(&d)?;
        }
        let all: Vec<ViewSpec> = all_views.into_iter().cloned().collect();
        let record = BakeRecord {
            before: coverage_of(&mesh, res, &generated),
            after: coverage_of(&mesh, res, &all),
        };
        write_json(&dir.join("coverage.json"), &record)
    }
}

/// Evaluation cameras: a Fibonacci set distinct from both rigs.
fn eval_views(cfg: &PipelineConfig) -> Result<Vec<ViewSpec>> {
    Ok(fibonacci_views(6, cfg.camera.radius, cfg.camera.fov, cfg.image_res)?)
}

pub struct Relight;

impl Stage for Relight {
    fn name(&self) -> &'static str {
        "relight"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let atlas_dir = ctx.need(self.name(), "bake", "atlas")?;
        let atlas = TextureAtlas::load_pngs(&atlas_dir)?;
        let mesh = ctx.mesh()?;
        let rig = ctx.cfg.light_rig();
        let truth = match &ctx.cfg.ground_truth {
            Some(p) if p.exists() => Some(TextureAtlas::load_pngs(p)?),
            Some(p) => return Err(CliError::Config(format!("ground_truth {} does not exist", p.display()))),
            None => None,
        };
        let dir = ctx.fresh_dir(self.name())?;
        let mut rows = Vec::new();
        for (i, v) in eval_views(&ctx.cfg)?.iter().enumerate() {
            let baked = render_relit(&mesh, &atlas, v, &rig);
            save16(&baked.image, dir.join(format!("{}_baked.png", stem(i))))?;
            if let Some(t) = &truth {
                let gt = render_relit(&mesh, t, v, &rig);
                save16(&gt.image, dir.join(format!("{}_truth.png", stem(i))))?;
                rows.push(MetricRow {
                    view: i,
                    psnr: psnr_masked(&baked.image, &gt.image, &gt.mask)?,
                });
            }
        }
        write_metrics_csv(dir.join("metrics.csv"), &rows)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub coverage_before: f64,
    pub coverage_after: f64,
    pub occupied_texels: usize,
    pub covered_before: usize,
    pub covered_after: usize,
    /// Per evaluation view, relit bake against relit ground truth.
    pub relight_psnr: Vec<f64>,
    pub mean_relight_psnr: Option<f64>,
    pub thresholds: crate::config::EvalThresholds,
    pub coverage_monotone: bool,
    pub coverage_pass: bool,
    pub psnr_pass: Option<bool>,
    pub pass: bool,
}

pub const EVAL_FILE: &str = "eval.json";

pub struct Eval;

impl Stage for Eval {
    fn name(&self) -> &'static str {
        "eval"
    }

    fn run(&self, ctx: &Context) -> Result<()> {
        let cov: BakeRecord = read_json(&ctx.need(self.name(), "bake", "coverage.json")?)?;
        let metrics = ctx.need(self.name(), "relight", "metrics.csv")?;
        let rows = lumitex_relight::read_metrics_csv(&metrics)?;
        let psnrs: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
        let mean = (!psnrs.is_empty()).then(|| psnrs.iter().sum::<f64>() / psnrs.len() as f64);
        let th = ctx.cfg.eval.clone();
        let monotone = cov.after.covered >= cov.before.covered;
        let coverage_pass = monotone && cov.after.ratio >= th.min_coverage;
        let psnr_pass = mean.map(|m| m >= th.min_psnr);
        let report = EvalReport {
            coverage_before: cov.before.ratio,
            coverage_after: cov.after.ratio,
            occupied_texels: cov.after.occupied,
            covered_before: cov.before.covered,
            covered_after: cov.after.covered,
            relight_psnr: psnrs,
            mean_relight_psnr: mean,
            thresholds: th,
            coverage_monotone: monotone,
            coverage_pass,
            psnr_pass,
            pass: coverage_pass && psnr_pass.unwrap_or(true),
        };
        let dir = ctx.fresh_dir(self.name())?;
        write_json(&dir.join(EVAL_FILE), &report)?;
        println!("{}", serde_json::to_string_pretty(&report)?);
        Ok(())
    }
}
