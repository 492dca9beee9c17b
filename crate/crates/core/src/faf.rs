//! Foreground amplification fusion.
//!
//! ```text
//! F_r     = Proj_r(LN(max_j F_sh_j))            M = OR_j M_j
//! F_merge = Conv(Proj_merge(LN([F_ego, F_r])))
//! F_fused = F_ego + Proj_out(F_merge * F_r * M)
//! ```

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{
    apply_linear, cellwise_max, concat_channels, conv2d_3x3, layer_norm_cells, CellMask,
    FeatureGrid, Kernel3x3, LinearMap, Shape,
};

pub const DEFAULT_LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub ln_eps: f64,
    pub proj_r: LinearMap,
    pub proj_merge: LinearMap,
    pub conv_merge: Kernel3x3,
    pub proj_out: LinearMap,
    pub seed: u64,
}

impl FusionParams {
    pub fn new(
        ln_eps: f64,
        proj_r: LinearMap,
        proj_merge: LinearMap,
        conv_merge: Kernel3x3,
        proj_out: LinearMap,
    ) -> Result<Self> {
        if !(ln_eps > 0.0) {
            return Err(Error::param(format!("ln_eps = {ln_eps} must be positive")));
        }
        let c = proj_r.cols();
        let ok = proj_r.rows() == c
            && proj_merge.cols() == 2 * c
            && proj_merge.rows() == c
            && conv_merge.in_channels() == c
            && conv_merge.out_channels() == c
            && proj_out.rows() == c
            && proj_out.cols() == c;
        if !ok {
            return Err(Error::param(format!(
                "fusion parameters are inconsistent with {c} channels"
            )));
        }
        Ok(Self {
            ln_eps,
            proj_r,
            proj_merge,
            conv_merge,
            proj_out,
            seed: 0,
        })
    }

    /// Seeded weights drawn in the order proj_r, proj_merge, conv_merge,
    /// proj_out from one SplitMix64 stream; all biases zero.
    pub fn seeded(channels: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        Self {
            ln_eps: DEFAULT_LN_EPS,
            proj_r: LinearMap::seeded(channels, channels, &mut rng),
            proj_merge: LinearMap::seeded(channels, 2 * channels, &mut rng),
            conv_merge: Kernel3x3::seeded(channels, channels, &mut rng),
            proj_out: LinearMap::seeded(channels, channels, &mut rng),
            seed,
        }
    }

    /// Test configuration whose gate is (approximately) `F_r^2`.
    ///
    /// `proj_merge` keeps only the neighbor half of the concatenation and
    /// the other maps are identities, so `F_merge` is a positively scaled
    /// copy of `F_r` and the gated update never opposes the received signal.
    pub fn nonneg_gating(channels: usize) -> Self {
        let c = channels;
        let mut w = vec![0.0; c * 2 * c];
        for i in 0..c {
            w[i * 2 * c + c + i] = 1.0;
        }
        Self {
            ln_eps: DEFAULT_LN_EPS,
            proj_r: LinearMap::identity(c),
            proj_merge: LinearMap::new(c, 2 * c, w, vec![0.0; c]).expect("valid dims"),
            conv_merge: Kernel3x3::delta(c),
            proj_out: LinearMap::identity(c),
            seed: 0,
        }
    }

    pub fn channels(&self) -> usize {
        self.proj_r.cols()
    }
}

/// Max-aggregate the neighbors' dense grids, OR their masks, then apply
/// LN and `proj_r` on covered cells. Uncovered cells stay zero; with no
/// neighbors the result is the zero grid and the empty mask.
pub fn aggregate_neighbors(
    shape: Shape,
    msgs: &[(FeatureGrid, CellMask)],
    p: &FusionParams,
) -> Result<(FeatureGrid, CellMask)> {
    let mut mask = CellMask::empty(shape.height, shape.width);
    if msgs.is_empty() {
        return Ok((FeatureGrid::zeros(shape), mask));
    }
    for (g, m) in msgs {
        g.expect_shape("aggregate_neighbors", shape)?;
        mask = mask.or(m)?;
    }
    let grids: Vec<&FeatureGrid> = msgs.iter().map(|(g, _)| g).collect();
    let maxed = cellwise_max(&grids)?;
    let normed = layer_norm_cells(&maxed, p.ln_eps, Some(&mask))?;
    let mut projected = apply_linear(&p.proj_r, &normed)?;
    for cell in 0..shape.cells() {
        if !mask.get(cell) {
            projected.cell_mut(cell).iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok((projected, mask))
}

/// `Conv(Proj_merge(LN([ego, fr])))`.
pub fn merge_interaction(ego: &FeatureGrid, fr: &FeatureGrid, p: &FusionParams) -> Result<FeatureGrid> {
    fr.expect_shape("merge_interaction", ego.shape())?;
    let cat = concat_channels(ego, fr)?;
    let normed = layer_norm_cells(&cat, p.ln_eps, None)?;
    let projected = apply_linear(&p.proj_merge, &normed)?;
    conv2d_3x3(&projected, &p.conv_merge)
}

/// `ego + Proj_out(merge * fr * mask)`.
///
/// Unmasked cells receive `ego + bias`; with a zero bias they are copied
/// from `ego` unchanged.
pub fn amplify(
    ego: &FeatureGrid,
    merge: &FeatureGrid,
    fr: &FeatureGrid,
    mask: &CellMask,
    p: &FusionParams,
) -> Result<FeatureGrid> {
    merge.expect_shape("amplify", ego.shape())?;
    fr.expect_shape("amplify", ego.shape())?;
    if mask.dims() != (ego.height(), ego.width()) {
        return Err(Error::shape("amplify", (ego.height(), ego.width()), mask.dims()));
    }
    if p.proj_out.cols() != ego.channels() {
        return Err(Error::shape("amplify", p.proj_out.cols(), ego.channels()));
    }
    let c = ego.channels();
    let bias = p.proj_out.bias();
    let mut out = ego.clone();
    let mut gate = vec![0.0f32; c];
    let mut update = vec![0.0f32; c];
    for cell in 0..ego.cells() {
        let dst = out.cell_mut(cell);
        if mask.get(cell) {
            for ((g, &m), &r) in gate.iter_mut().zip(merge.cell(cell)).zip(fr.cell(cell)) {
                *g = m * r;
            }
            p.proj_out.apply_into(&gate, &mut update);
            for (d, &u) in dst.iter_mut().zip(&update) {
                *d += u;
            }
        } else {
            for (d, &b) in dst.iter_mut().zip(bias) {
                if b != 0.0 {
                    *d += b;
                }
            }
        }
    }
    Ok(out)
}

/// Intermediate and final products of one fusion pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub received: FeatureGrid,
    pub mask: CellMask,
    pub merge: FeatureGrid,
    pub fused: FeatureGrid,
}

pub fn fuse(
    ego: &FeatureGrid,
    neighbors: &[(FeatureGrid, CellMask)],
    p: &FusionParams,
) -> Result<FusionOutput> {
    if p.channels() != ego.channels() {
        return Err(Error::shape("fuse", p.channels(), ego.channels()));
    }
    let (received, mask) = aggregate_neighbors(ego.shape(), neighbors, p)?;
    let merge = merge_interaction(ego, &received, p)?;
    let fused = amplify(ego, &merge, &received, &mask, p)?;
    Ok(FusionOutput {
        received,
        mask,
        merge,
        fused,
    })
}
