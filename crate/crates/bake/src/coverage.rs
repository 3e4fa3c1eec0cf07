//! UV coverage accounting.

use lumitex_geometry::raster::{frontality, fragment_uv, rasterize_fragments};
use lumitex_geometry::texel::{occupancy, texel_id, wrap_uv};
use lumitex_geometry::{TexelSet, TriMesh, ViewSpec, DEFAULT_GRAZING_CUTOFF};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageState {
    pub res: usize,
    pub occupied: TexelSet,
    pub covered: TexelSet,
    /// Highest `|n . view_dir|` seen per texel, 0 where uncovered.
    pub best_score: Vec<f64>,
    pub cutoff: f64,
}

impl CoverageState {
    pub fn new(mesh: &TriMesh, res: usize) -> Self {
        Self::with_occupancy(occupancy(mesh, res))
    }

    pub fn with_occupancy(occupied: TexelSet) -> Self {
        let res = occupied.res();
        Self {
            res,
            covered: TexelSet::new(res),
            best_score: vec![0.0; res * res],
            occupied,
            cutoff: DEFAULT_GRAZING_CUTOFF,
        }
    }

    pub fn ratio(&self) -> f64 {
        let occ = self.occupied.count();
        if occ == 0 {
            0.0
        } else {
            self.covered.count() as f64 / occ as f64
        }
    }

    /// Texels of `set` that are occupied but not yet covered.
    pub fn gain_of(&self, set: &TexelSet) -> usize {
        set.iter().filter(|&i| self.occupied.contains(i) && !self.covered.contains(i)).count()
    }

    /// Marks a visible set as covered (restricted to occupied texels) and
    /// returns the number of newly covered texels.
    pub fn add_visible(&mut self, set: &TexelSet) -> usize {
        let mut gain = 0;
        for i in set.iter() {
            if self.occupied.contains(i) && !self.covered.contains(i) {
                self.covered.insert(i);
                gain += 1;
            }
        }
        gain
    }

    /// Rasterizes `view`, records per-texel best frontality and covers its
    /// visible texels. Returns the gain.
    pub fn add_view(&mut self, mesh: &TriMesh, view: &ViewSpec) -> usize {
        let buf = rasterize_fragments(mesh, view);
        let mut vis = TexelSet::new(self.res);
        for y in 0..buf.height {
            for x in 0..buf.width {
                let Some(f) = buf.get(x, y) else { continue };
                let score = frontality(mesh, view, x, y, f);
                if score < self.cutoff {
                    continue;
                }
                let id = texel_id(wrap_uv(fragment_uv(mesh, f)).0, self.res) as usize;
                if self.occupied.contains(id) && score > self.best_score[id] {
                    self.best_score[id] = score;
                }
                vis.insert(id);
            }
        }
        self.add_visible(&vis)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewGain {
    pub view: usize,
    pub gain: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub atlas_res: usize,
    pub occupied: usize,
    pub covered: usize,
    pub ratio: f64,
    pub gains: Vec<ViewGain>,
}

pub fn coverage_report(state: &CoverageState, gains: &[ViewGain]) -> CoverageReport {
    CoverageReport {
        atlas_res: state.res,
        occupied: state.occupied.count(),
        covered: state.covered.count(),
        ratio: state.ratio(),
        gains: gains.to_vec(),
    }
}
