//! Procedural toy scenes: textured primitives rendered from a fixed
//! generation rig plus the candidate rig, under one of the preset lights.

use std::path::{Path, PathBuf};

use lumitex_bake::{candidate_set, render_material, Material, TextureAtlas};
use lumitex_geometry::{fibonacci_views, mesh, occupancy, rasterize, BitDepth, GeoMaps, Image, TriMesh, Uv, ViewSpec};
use lumitex_lvsm::{LvsmScene, SceneView};
use lumitex_mvpbr::{NetConfig, Sample};
use lumitex_relight::{preset_rigs, render_relit, LightRig};
use lumitex_tensor::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Cube,
    Icosphere,
    Cylinder,
}

impl Primitive {
    pub const ALL: [Primitive; 3] = [Primitive::Cube, Primitive::Icosphere, Primitive::Cylinder];

    pub fn mesh(self) -> TriMesh {
        let mut m = match self {
            Primitive::Cube => mesh::cube(),
            Primitive::Icosphere => mesh::icosphere(1),
            Primitive::Cylinder => mesh::cylinder(12),
        };
        m.normalize();
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pattern {
    Checkerboard,
    Gradient,
    TwoTone,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Checkerboard, Pattern::Gradient, Pattern::TwoTone];
}

/// Two materials drawn from `rng`, combined over UV space by `pattern`.
pub fn pattern_atlas(pattern: Pattern, res: usize, mesh: &TriMesh, rng: &mut SplitMix64) -> TextureAtlas {
    let mut draw = || Material {
        albedo: [rng.uniform_range(0.1, 0.9), rng.uniform_range(0.1, 0.9), rng.uniform_range(0.1, 0.9)],
        metallic: if rng.uniform() < 0.5 { 0.0 } else { rng.uniform_range(0.5, 1.0) },
        roughness: rng.uniform_range(0.25, 0.9),
    };
    let (a, b) = (draw(), draw());
    let lerp = |s: f64| {
        let (x, y) = (a.to_array(), b.to_array());
        Material::from_array(std::array::from_fn(|i| x[i] + (y[i] - x[i]) * s))
    };
    TextureAtlas::from_fn(res, &occupancy(mesh, res), |uv: Uv| match pattern {
        Pattern::Checkerboard => {
            let cell = (uv[0] * 8.0).floor() as i64 + (uv[1] * 8.0).floor() as i64;
            if cell.rem_euclid(2) == 0 {
                a
            } else {
                b
            }
        }
        Pattern::Gradient => lerp(uv[0].clamp(0.0, 1.0)),
        Pattern::TwoTone => {
            if uv[0] < 0.5 {
                a
            } else {
                b
            }
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewRole {
    /// One of the N views the multi-view generator produces.
    Generation,
    Candidate,
}

#[derive(Clone, Debug)]
pub struct RenderedView {
    pub spec: ViewSpec,
    pub role: ViewRole,
    pub geo: GeoMaps,
    pub shaded: Image,
    pub albedo: Image,
    /// Metallic, roughness, 0.
    pub mr: Image,
}

impl RenderedView {
    pub fn render(mesh: &TriMesh, atlas: &TextureAtlas, rig: &LightRig, spec: &ViewSpec, role: ViewRole) -> Self {
        let mat = render_material(mesh, atlas, spec);
        Self {
            spec: spec.clone(),
            role,
            geo: rasterize(mesh, spec),
            shaded: render_relit(mesh, atlas, spec, rig).image,
            albedo: mat.albedo,
            mr: mat.mr,
        }
    }

    /// Albedo then metallic-roughness, the six-channel image the view
    /// synthesizer works with.
    pub fn material6(&self) -> Image {
        Image::concat_channels(&[&self.albedo, &self.mr]).expect("same resolution")
    }
}

#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub primitive: Primitive,
    pub pattern: Pattern,
    pub rig: LightRig,
    pub mesh: TriMesh,
    pub atlas: TextureAtlas,
    /// Generation views first, then candidates.
    pub views: Vec<RenderedView>,
}

/// Camera layout shared by every scene and by inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Rig {
    pub generation: Vec<ViewSpec>,
    pub candidates: Vec<ViewSpec>,
}

impl Rig {
    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        Self::new(cfg.views, cfg.candidates, cfg.camera.radius, cfg.camera.fov, cfg.image_res)
    }

    pub fn new(n: usize, k: usize, radius: f64, fov: f64, res: usize) -> Result<Self> {
        Ok(Self {
            generation: fibonacci_views(n, radius, fov, res)?,
            candidates: if k == 0 { Vec::new() } else { candidate_set(k, radius, fov, res)? },
        })
    }
}

impl Scene {
    pub fn build(name: &str, primitive: Primitive, pattern: Pattern, rig: LightRig, atlas_res: usize, cameras: &Rig, rng: &mut SplitMix64) -> Self {
        let mesh = primitive.mesh();
        let atlas = pattern_atlas(pattern, atlas_res, &mesh, rng);
        let views = cameras
            .generation
            .iter()
            .map(|v| (v, ViewRole::Generation))
            .chain(cameras.candidates.iter().map(|v| (v, ViewRole::Candidate)))
            .map(|(v, role)| RenderedView::render(&mesh, &atlas, &rig, v, role))
            .collect();
        Self {
            name: name.to_string(),
            primitive,
            pattern,
            rig,
            mesh,
            atlas,
            views,
        }
    }

    pub fn generation_views(&self) -> impl Iterator<Item = &RenderedView> {
        self.views.iter().filter(|v| v.role == ViewRole::Generation)
    }

    /// The image prompt: the first generation view's shaded render.
    pub fn reference(&self) -> &Image {
        &self.generation_views().next().expect("scene has generation views").shaded
    }

    pub fn pbr_sample(&self, net: &NetConfig) -> Result<Sample> {
        let gen: Vec<&RenderedView> = self.generation_views().collect();
        let geo: Vec<GeoMaps> = gen.iter().map(|v| v.geo.clone()).collect();
        let pick = |f: fn(&RenderedView) -> &Image| gen.iter().map(|v| f(v).clone()).collect::<Vec<_>>();
        let (shaded, albedo, mr) = (pick(|v| &v.shaded), pick(|v| &v.albedo), pick(|v| &v.mr));
        Ok(Sample::new(net, &self.name, self.reference(), &geo, &shaded, Some(&albedo), Some(&mr))?)
    }

    pub fn lvsm_scene(&self) -> LvsmScene {
        LvsmScene {
            name: self.name.clone(),
            views: self
                .views
                .iter()
                .map(|v| SceneView {
                    image: v.material6(),
                    maps: v.geo.clone(),
                })
                .collect(),
        }
    }
}

/// Scene `i` cycles primitives, then patterns, then rigs, so small counts
/// still mix all three. Colors come from `seed`.
pub fn generate(count: usize, seed: u64, atlas_res: usize, cameras: &Rig) -> Vec<Scene> {
    let rigs = preset_rigs();
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|i| {
            let mut local = rng.fork();
            Scene::build(
                &format!("scene_{i:03}"),
                Primitive::ALL[i % 3],
                Pattern::ALL[(i / 3 + i) % 3],
                rigs[(i + 2 * (i / 3)) % 3].clone(),
                atlas_res,
                cameras,
                &mut local,
            )
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewRecord {
    pub index: usize,
    pub role: ViewRole,
    /// Stem of the geometry maps (`<stem>_normal.png` and friends).
    pub geo: PathBuf,
    pub shaded: PathBuf,
    pub albedo: PathBuf,
    pub mr: PathBuf,
}

/// One row of `scenes.json`. Paths are relative to the dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub name: String,
    pub primitive: Primitive,
    pub pattern: Pattern,
    pub rig: String,
    pub mesh: PathBuf,
    pub atlas: PathBuf,
    pub cameras: PathBuf,
    pub reference: PathBuf,
    pub views: Vec<ViewRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub seed: u64,
    pub generation_views: usize,
    pub candidate_views: usize,
    pub image_res: usize,
    pub scenes: Vec<SceneRecord>,
}

pub const INDEX_FILE: &str = "scenes.json";

fn mkdir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

/// Writes one directory per scene and the `scenes.json` index.
pub fn write_dataset(dir: &Path, scenes: &[Scene], seed: u64) -> Result<DatasetIndex> {
    mkdir(dir)?;
    let mut records = Vec::new();
    for s in scenes {
        let sd = dir.join(&s.name);
        mkdir(&sd)?;
        mkdir(&sd.join("atlas"))?;
        let rel = |f: &str| PathBuf::from(&s.name).join(f);
        std::fs::write(sd.join("mesh.obj"), s.mesh.to_obj()).map_err(|e| CliError::io(sd.join("mesh.obj"), e))?;
        s.atlas.save_pngs(sd.join("atlas"))?;
        let specs: Vec<ViewSpec> = s.views.iter().map(|v| v.spec.clone()).collect();
        lumitex_geometry::camera::save_cameras(sd.join("cameras.json"), &specs)?;
        s.reference().save_png(sd.join("reference.png"), BitDepth::Sixteen)?;
        let mut views = Vec::new();
        for (i, v) in s.views.iter().enumerate() {
            let stem = format!("view_{i:02}");
            v.geo.save_pngs(&sd, &stem)?;
            for (img, kind) in [(&v.shaded, "shaded"), (&v.albedo, "albedo"), (&v.mr, "mr")] {
                img.save_png(sd.join(format!("{stem}_{kind}.png")), BitDepth::Sixteen)?;
            }
            views.push(ViewRecord {
                index: i,
                role: v.role,
                geo: rel(&stem),
                shaded: rel(&format!("{stem}_shaded.png")),
                albedo: rel(&format!("{stem}_albedo.png")),
                mr: rel(&format!("{stem}_mr.png")),
            });
        }
        records.push(SceneRecord {
            name: s.name.clone(),
            primitive: s.primitive,
            pattern: s.pattern,
            rig: s.rig.name.clone(),
            mesh: rel("mesh.obj"),
            atlas: rel("atlas"),
            cameras: rel("cameras.json"),
            reference: rel("reference.png"),
            views,
        });
    }
    let first = scenes.first();
    let count = |role| first.map(|s| s.views.iter().filter(|v| v.role == role).count()).unwrap_or(0);
    let index = DatasetIndex {
        seed,
        generation_views: count(ViewRole::Generation),
        candidate_views: count(ViewRole::Candidate),
        image_res: first.map(|s| s.views[0].spec.width).unwrap_or(0),
        scenes: records,
    };
    let path = dir.join(INDEX_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&index)?).map_err(|e| CliError::io(&path, e))?;
    Ok(index)
}

pub fn read_index(dir: &Path) -> Result<DatasetIndex> {
    let path = dir.join(INDEX_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads every scene back. Fails if a referenced file is missing or the
/// resolutions disagree.
pub fn load_dataset(dir: &Path) -> Result<Vec<Scene>> {
    let index = read_index(dir)?;
    let rigs = preset_rigs();
    index
        .scenes
        .iter()
        .map(|r| {
            let mesh = TriMesh::load_obj(dir.join(&r.mesh))?;
            let atlas = TextureAtlas::load_pngs(dir.join(&r.atlas))?;
            let specs = lumitex_geometry::camera::load_cameras(dir.join(&r.cameras))?;
            let rig = rigs
                .iter()
                .find(|g| g.name == r.rig)
                .cloned()
                .ok_or_else(|| CliError::Config(format!("scene {}: unknown rig {:?}", r.name, r.rig)))?;
            if specs.len() != r.views.len() {
                return Err(CliError::Config(format!("scene {}: {} cameras for {} views", r.name, specs.len(), r.views.len())));
            }
            let views = r
                .views
                .iter()
                .zip(specs)
                .map(|(v, spec)| {
                    let geo_stem = dir.join(&v.geo);
                    let (gdir, stem) = (geo_stem.parent().unwrap_or(dir), geo_stem.file_name().and_then(|s| s.to_str()).unwrap_or(""));
                    let view = RenderedView {
                        geo: GeoMaps::load_pngs(gdir, stem)?,
                        shaded: Image::load_png(dir.join(&v.shaded))?,
                        albedo: Image::load_png(dir.join(&v.albedo))?,
                        mr: Image::load_png(dir.join(&v.mr))?,
                        spec,
                        role: v.role,
                    };
                    let res = (view.spec.width, view.spec.height);
                    for img in [&view.shaded, &view.albedo, &view.mr, &view.geo.mask] {
                        if (img.width, img.height) != res {
                            return Err(CliError::Config(format!("scene {}: view {} images disagree in resolution", r.name, v.index)));
                        }
                    }
                    Ok(view)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Scene {
                name: r.name.clone(),
                primitive: r.primitive,
                pattern: r.pattern,
                rig,
                mesh,
                atlas,
                views,
            })
        })
        .collect()
}
