//! Foreground context attention: refine confidence with the density prior,
//! pick foreground cells, and enrich them with deformable attention over the
//! full BEV map.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{
    bilinear_sample_into, minmax_normalize, ratio_count, topk_cells, CellMask, FeatureGrid,
    LinearMap, ScalarGrid,
};

/// Default number of sampling points per query.
pub const DEFAULT_POINTS: usize = 4;

/// Scalar grid whose values all lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceGrid(ScalarGrid);

impl ConfidenceGrid {
    pub fn new(grid: ScalarGrid) -> Result<Self> {
        if let Some(i) = grid.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::param(format!(
                "confidence at cell {i} is {} (outside [0, 1])",
                grid.get(i)
            )));
        }
        Ok(Self(grid))
    }

    pub fn clamped(grid: ScalarGrid) -> Self {
        Self(grid.map(|v| v.clamp(0.0, 1.0)))
    }

    pub fn grid(&self) -> &ScalarGrid {
        &self.0
    }

    pub fn into_inner(self) -> ScalarGrid {
        self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }
}

/// `C' = (1 - norm(D)) * C`, cellwise.
pub fn refine_confidence(conf: &ConfidenceGrid, density: &ScalarGrid) -> Result<ConfidenceGrid> {
    density.expect_dims("refine_confidence", conf.dims())?;
    if let Some(i) = density.data().iter().position(|&d| d < 0.0) {
        return Err(Error::param(format!("negative density at cell {i}")));
    }
    let norm = minmax_normalize(density);
    let data = conf
        .0
        .data()
        .iter()
        .zip(norm.data())
        .map(|(&c, &d)| ((1.0 - d) * c).clamp(0.0, 1.0))
        .collect();
    let (h, w) = conf.dims();
    Ok(ConfidenceGrid(ScalarGrid::from_vec(h, w, data)?))
}

/// How foreground cells are chosen from the refined confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Selection {
    /// Exactly `floor(ratio * H * W)` cells by top-k.
    TopK { ratio: f64 },
    /// Every cell with confidence at or above `threshold`.
    Threshold { threshold: f64 },
}

impl Selection {
    pub fn select(&self, conf: &ConfidenceGrid) -> Result<CellMask> {
        match *self {
            Selection::TopK { ratio } => select_foreground(conf, ratio),
            Selection::Threshold { threshold } => Ok(select_by_threshold(conf, threshold)),
        }
    }
}

/// Top-k foreground mask with `k = floor(ratio * H * W)`.
pub fn select_foreground(conf: &ConfidenceGrid, ratio: f64) -> Result<CellMask> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::param(format!("selection ratio {ratio} outside (0, 1]")));
    }
    let (h, w) = conf.dims();
    let k = ratio_count(ratio, h * w);
    let cells = topk_cells(conf.grid(), k, &CellMask::full(h, w))?;
    CellMask::from_indices(h, w, cells)
}

pub fn select_by_threshold(conf: &ConfidenceGrid, threshold: f64) -> CellMask {
    let (h, w) = conf.dims();
    let bits = conf
        .grid()
        .data()
        .iter()
        .map(|&c| c as f64 >= threshold)
        .collect();
    CellMask::from_bits(h, w, bits).expect("dims match by construction")
}

/// Single-scale deformable attention parameters.
///
/// `offset_map` emits `(dx, dy)` pairs in cell units (`dx` along the width),
/// one pair per sampling point; `weight_map` emits one logit per point.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformAttnParams {
    pub num_points: usize,
    pub offset_map: LinearMap,
    pub weight_map: LinearMap,
    pub value_map: LinearMap,
    pub output_map: LinearMap,
    pub seed: u64,
}

impl DeformAttnParams {
    pub fn new(
        num_points: usize,
        offset_map: LinearMap,
        weight_map: LinearMap,
        value_map: LinearMap,
        output_map: LinearMap,
    ) -> Result<Self> {
        if num_points == 0 {
            return Err(Error::param("deformable attention needs at least one point"));
        }
        let c = value_map.cols();
        if offset_map.rows() != 2 * num_points || weight_map.rows() != num_points {
            return Err(Error::shape(
                "DeformAttnParams",
                (2 * num_points, num_points),
                (offset_map.rows(), weight_map.rows()),
            ));
        }
        let dims_ok = offset_map.cols() == c
            && weight_map.cols() == c
            && value_map.rows() == c
            && output_map.rows() == c
            && output_map.cols() == c;
        if !dims_ok {
            return Err(Error::shape("DeformAttnParams", c, offset_map.cols()));
        }
        Ok(Self {
            num_points,
            offset_map,
            weight_map,
            value_map,
            output_map,
            seed: 0,
        })
    }

    /// Weights drawn from one SplitMix64 stream in the order offset, weight,
    /// value, output; each uniform in `[-1/sqrt(C), 1/sqrt(C)]`, zero bias.
    pub fn seeded(channels: usize, num_points: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self {
            num_points,
            offset_map: LinearMap::seeded(2 * num_points, channels, &mut rng),
            weight_map: LinearMap::seeded(num_points, channels, &mut rng),
            value_map: LinearMap::seeded(channels, channels, &mut rng),
            output_map: LinearMap::seeded(channels, channels, &mut rng),
            seed,
        }
    }

    /// Zero offsets, uniform weights, identity value and output maps.
    pub fn identity(channels: usize, num_points: usize) -> Self {
        Self {
            num_points,
            offset_map: LinearMap::zeros(2 * num_points, channels),
            weight_map: LinearMap::zeros(num_points, channels),
            value_map: LinearMap::identity(channels),
            output_map: LinearMap::identity(channels),
            seed: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.value_map.cols()
    }

    /// Softmax of the per-point logits for a query feature.
    pub fn attention_weights(&self, query: &[f32]) -> Vec<f64> {
        let mut logits = vec![0.0f32; self.num_points];
        self.weight_map.apply_into(query, &mut logits);
        softmax(&logits)
    }
}

fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let exps: Vec<f64> = logits.iter().map(|&l| (l as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Replace every foreground cell with its deformable-attention output;
/// other cells pass through unchanged. Samples always read the input grid.
pub fn deformable_enrich(
    f: &FeatureGrid,
    fg: &CellMask,
    p: &DeformAttnParams,
) -> Result<FeatureGrid> {
    if fg.dims() != (f.height(), f.width()) {
        return Err(Error::shape("deformable_enrich", (f.height(), f.width()), fg.dims()));
    }
    if p.channels() != f.channels() {
        return Err(Error::shape("deformable_enrich", p.channels(), f.channels()));
    }
    let c = f.channels();
    let k = p.num_points;
    let w = f.width();
    let mut out = f.clone();
    let mut offsets = vec![0.0f32; 2 * k];
    let mut sample = vec![0.0f32; c];
    let mut value = vec![0.0f32; c];
    let mut acc = vec![0.0f64; c];
    let mut pooled = vec![0.0f32; c];
    for q in fg.indices() {
        let query = f.cell(q);
        let (qx, qy) = ((q % w) as f64, (q / w) as f64);
        p.offset_map.apply_into(query, &mut offsets);
        let weights = p.attention_weights(query);
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (pt, &a) in weights.iter().enumerate() {
            let sx = qx + offsets[2 * pt] as f64;
            let sy = qy + offsets[2 * pt + 1] as f64;
            bilinear_sample_into(f, sx, sy, &mut sample);
            p.value_map.apply_into(&sample, &mut value);
            for (s, &v) in acc.iter_mut().zip(&value) {
                *s += a * v as f64;
            }
        }
        for (dst, &s) in pooled.iter_mut().zip(&acc) {
            *dst = s as f32;
        }
        p.output_map.apply_into(&pooled, out.cell_mut(q));
    }
    Ok(out)
}
