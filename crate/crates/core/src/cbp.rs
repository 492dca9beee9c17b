//! Curricular background pruning: mine informative background cells by
//! their similarity to confidently-background anchors, and anneal the
//! background ratio to zero over training epochs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fca::ConfidenceGrid;
use crate::tensor::{
    cosine_with_norms, l2_norm, minmax_normalize, ratio_count, topk_cells, CellMask, FeatureGrid,
    ScalarGrid, SparseCells,
};

pub const DEFAULT_R0: f64 = 0.1;
pub const DEFAULT_GAMMA: f64 = 0.8;
pub const DEFAULT_PERIOD: u32 = 5;
pub const DEFAULT_TAU: f64 = 0.05;

/// Background-ratio schedule. The ratio is a closed-form function of the
/// epoch: `r0 * gamma^floor(epoch / period)`, or exactly 0 from the cutoff on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurriculumState {
    pub epoch: u32,
    pub r0: f64,
    pub gamma: f64,
    pub period: u32,
    pub tau: f64,
    pub r_current: f64,
    /// `None` disables the forced cutoff.
    pub final_cutoff_epoch: Option<u32>,
}

impl Default for CurriculumState {
    fn default() -> Self {
        Self::new(
            DEFAULT_R0,
            DEFAULT_GAMMA,
            DEFAULT_PERIOD,
            DEFAULT_TAU,
            Some(4 * DEFAULT_PERIOD),
        )
        .expect("defaults are valid")
    }
}

impl CurriculumState {
    pub fn new(r0: f64, gamma: f64, period: u32, tau: f64, cutoff: Option<u32>) -> Result<Self> {
        if !(0.0..1.0).contains(&r0) {
            return Err(Error::param(format!("r0 = {r0} outside [0, 1)")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::param(format!("gamma = {gamma} outside (0, 1]")));
        }
        if period == 0 {
            return Err(Error::param("period must be positive"));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(Error::param(format!("tau = {tau} outside [0, 1)")));
        }
        let mut s = Self {
            epoch: 0,
            r0,
            gamma,
            period,
            tau,
            r_current: 0.0,
            final_cutoff_epoch: cutoff,
        };
        s.r_current = s.ratio_at(0);
        Ok(s)
    }

    /// Inference mode: no background sharing at all.
    pub fn inference() -> Self {
        Self::new(0.0, 1.0, 1, 0.0, None).expect("valid")
    }

    pub fn ratio_at(&self, epoch: u32) -> f64 {
        if self.final_cutoff_epoch.is_some_and(|c| epoch >= c) {
            return 0.0;
        }
        let stage = (epoch / self.period) as i32;
        self.r0 * self.gamma.powi(stage)
    }

    pub fn at_epoch(&self, epoch: u32) -> Self {
        Self {
            epoch,
            r_current: self.ratio_at(epoch),
            ..*self
        }
    }

    pub fn step(&self) -> Self {
        self.at_epoch(self.epoch + 1)
    }
}

/// How an uncertain cell's similarities to the anchors are reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityAggregate {
    #[default]
    Max,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningOptions {
    pub aggregate: SimilarityAggregate,
    /// Score anchors with min-max normalized density instead of raw counts.
    pub normalized_density: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutput {
    pub shared_mask: CellMask,
    /// Confident background cells, in rank order.
    pub anchors: Vec<usize>,
    /// Mined uncertain background cells, in rank order.
    pub selected_bg: Vec<usize>,
}

/// Informative background mining.
///
/// Anchors are the `floor(r HW)` background cells with the highest
/// `(1 - conf) * density`. The remaining background is ranked by similarity
/// to the anchors and the top `floor(tau HW)` join the foreground in the
/// shared mask. Both counts are capped at the available pool.
pub fn mine_bg(
    f: &FeatureGrid,
    density: &ScalarGrid,
    conf: &ConfidenceGrid,
    fg: &CellMask,
    r: f64,
    tau: f64,
    opts: MiningOptions,
) -> Result<MiningOutput> {
    let dims = (f.height(), f.width());
    density.expect_dims("mine_bg density", dims)?;
    if conf.dims() != dims {
        return Err(Error::shape("mine_bg confidence", dims, conf.dims()));
    }
    if fg.dims() != dims {
        return Err(Error::shape("mine_bg foreground", dims, fg.dims()));
    }
    for (name, v) in [("r", r), ("tau", tau)] {
        if !(0.0..1.0).contains(&v) {
            return Err(Error::param(format!("{name} = {v} outside [0, 1)")));
        }
    }
    let cells = f.cells();
    let (h, w) = dims;
    let bg = fg.not();

    let density = if opts.normalized_density {
        minmax_normalize(density)
    } else {
        density.clone()
    };
    let bg_score: Vec<f32> = conf
        .grid()
        .data()
        .iter()
        .zip(density.data())
        .map(|(&c, &d)| (1.0 - c) * d)
        .collect();
    let bg_score = ScalarGrid::from_vec(h, w, bg_score)?;

    let k_a = ratio_count(r, cells).min(bg.count());
    let anchors = topk_cells(&bg_score, k_a, &bg)?;
    let anchor_mask = CellMask::from_indices(h, w, anchors.iter().copied())?;
    let pool = bg.and_not(&anchor_mask)?;

    let k_tau = ratio_count(tau, cells).min(pool.count());
    let selected_bg = if anchors.is_empty() || k_tau == 0 {
        Vec::new()
    } else {
        let sim = anchor_similarity(f, &anchor_mask.indices(), &pool, opts.aggregate);
        topk_cells(&sim, k_tau, &pool)?
    };

    let mut shared_mask = fg.clone();
    for &c in &selected_bg {
        shared_mask.set(c, true);
    }
    Ok(MiningOutput {
        shared_mask,
        anchors,
        selected_bg,
    })
}

/// Per-cell similarity to the anchor set over `pool`; zero elsewhere.
/// Anchors are visited in ascending index order.
fn anchor_similarity(
    f: &FeatureGrid,
    anchors: &[usize],
    pool: &CellMask,
    aggregate: SimilarityAggregate,
) -> ScalarGrid {
    let anchor_norms: Vec<f64> = anchors.iter().map(|&a| l2_norm(f.cell(a))).collect();
    let scores: Vec<f32> = (0..f.cells())
        .into_par_iter()
        .map(|c| {
            if !pool.get(c) {
                return 0.0;
            }
            let v = f.cell(c);
            let nv = l2_norm(v);
            let sims = anchors
                .iter()
                .zip(&anchor_norms)
                .map(|(&a, &na)| cosine_with_norms(v, nv, f.cell(a), na));
            match aggregate {
                SimilarityAggregate::Max => sims.fold(f32::NEG_INFINITY, f32::max),
                SimilarityAggregate::Mean => {
                    (sims.map(|s| s as f64).sum::<f64>() / anchors.len() as f64) as f32
                }
            }
        })
        .collect();
    ScalarGrid::from_vec(f.height(), f.width(), scores).expect("dims match by construction")
}

/// Gather the masked cells of `enriched`, ascending by index.
pub fn compose_shared(enriched: &FeatureGrid, shared_mask: &CellMask) -> Result<SparseCells> {
    if shared_mask.dims() != (enriched.height(), enriched.width()) {
        return Err(Error::shape(
            "compose_shared",
            (enriched.height(), enriched.width()),
            shared_mask.dims(),
        ));
    }
    let indices: Vec<u32> = shared_mask.indices().into_iter().map(|i| i as u32).collect();
    let mut values = Vec::with_capacity(indices.len() * enriched.channels());
    for &i in &indices {
        values.extend_from_slice(enriched.cell(i as usize));
    }
    Ok(SparseCells {
        shape: enriched.shape(),
        indices,
        values,
    })
}
