//! Candidate cameras and view selection by uncovered-texel gain.

use lumitex_geometry::{fibonacci_views, visible_texels_with, TexelSet, TriMesh, ViewSpec};

use crate::coverage::{CoverageState, ViewGain};
use crate::error::{BakeError, Result};
use crate::registry::Registry;

pub const CANDIDATE_RADIUS: f64 = 3.2;
pub const CANDIDATE_FOV: f64 = 0.8;

/// `k` cameras on a Fibonacci sphere of radius `radius`, looking at the
/// origin.
pub fn candidate_set(k: usize, radius: f64, fov_y: f64, res: usize) -> Result<Vec<ViewSpec>> {
    if k == 0 {
        return Err(BakeError::Contract("candidate set needs K >= 1".into()));
    }
    Ok(fibonacci_views(k, radius, fov_y, res)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pick {
    pub candidate: usize,
    pub gain: usize,
}

pub trait ViewSelector {
    /// Choose `m` distinct candidates given each candidate's visible texels.
    /// `state` is updated with the picks, in pick order.
    fn select(&self, state: &mut CoverageState, candidates: &[TexelSet], m: usize) -> Vec<Pick>;
}

/// Re-ranks the remaining candidates after every pick.
pub struct Greedy;

impl ViewSelector for Greedy {
    fn select(&self, state: &mut CoverageState, candidates: &[TexelSet], m: usize) -> Vec<Pick> {
        let mut taken = vec![false; candidates.len()];
        let mut picks = Vec::with_capacity(m);
        for _ in 0..m {
            let mut best: Option<(usize, usize)> = None;
            for (k, set) in candidates.iter().enumerate() {
                if taken[k] {
                    continue;
                }
                let g = state.gain_of(set);
                if best.map_or(true, |(_, bg)| g > bg) {
                    best = Some((k, g));
                }
            }
            let Some((k, _)) = best else { break };
            taken[k] = true;
            let gain = state.add_visible(&candidates[k]);
            picks.push(Pick { candidate: k, gain });
        }
        picks
    }
}

/// Ranks once against the initial coverage and takes the top `m`.
pub struct StaticRank;

impl ViewSelector for StaticRank {
    fn select(&self, state: &mut CoverageState, candidates: &[TexelSet], m: usize) -> Vec<Pick> {
        let mut order: Vec<(usize, usize)> = candidates.iter().enumerate().map(|(k, s)| (k, state.gain_of(s))).collect();
        order.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        order
            .into_iter()
            .take(m)
            .map(|(k, _)| Pick {
                candidate: k,
                gain: state.add_visible(&candidates[k]),
            })
            .collect()
    }
}

pub fn selector_registry() -> Registry<dyn ViewSelector> {
    let mut r: Registry<dyn ViewSelector> = Registry::new("view selector");
    r.register("greedy", Box::new(Greedy));
    r.register("static", Box::new(StaticRank));
    r
}

#[derive(Clone, Debug)]
pub struct Selection {
    pub picks: Vec<Pick>,
    pub views: Vec<ViewSpec>,
    /// Coverage after the initial views, before any pick.
    pub before: CoverageState,
    pub after: CoverageState,
}

impl Selection {
    pub fn gains(&self) -> Vec<ViewGain> {
        self.picks
            .iter()
            .zip(&self.views)
            .map(|(p, v)| ViewGain { view: v.index, gain: p.gain })
            .collect()
    }
}

/// Cover the atlas with `initial` views, then pick `m` of `candidates`.
pub fn greedy_select(
    mesh: &TriMesh,
    candidates: &[ViewSpec],
    initial: &[ViewSpec],
    m: usize,
    atlas_res: usize,
    selector: &dyn ViewSelector,
) -> Result<Selection> {
    if m > candidates.len() {
        return Err(BakeError::Contract(format!("cannot select M = {m} views from K = {} candidates", candidates.len())));
    }
    let mut state = CoverageState::new(mesh, atlas_res);
    for v in initial {
        state.add_view(mesh, v);
    }
    let before = state.clone();
    let sets: Vec<TexelSet> = candidates.iter().map(|v| visible_texels_with(mesh, v, atlas_res, state.cutoff)).collect();
    let picks = selector.select(&mut state, &sets, m);
    for p in &picks {
        state.add_view(mesh, &candidates[p.candidate]);
    }
    let views = picks.iter().map(|p| candidates[p.candidate].clone()).collect();
    Ok(Selection {
        picks,
        views,
        before,
        after: state,
    })
}
