//! Dense BEV grids, boolean cell masks and the numeric kernels shared by
//! every pipeline stage.
//!
//! Feature grids are stored channel-last: cell `y * width + x` owns the
//! contiguous slice `data[cell * channels..(cell + 1) * channels]`. All
//! reductions accumulate in `f64` in ascending index order so results are
//! reproducible bit-for-bit regardless of thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Norm below which a vector is treated as empty by [`cosine_similarity`].
pub const SIMILARITY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.cells()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Self { channels, ..self }
    }
}

fn check_dims(op: &'static str, dims: &[usize]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::param(format!("{op}: dimensions must be positive, got {dims:?}")));
    }
    Ok(())
}

fn check_finite(op: &'static str, data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::param(format!("{op}: non-finite value at {i}"))),
        None => Ok(()),
    }
}

/// Dense `C x H x W` feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    shape: Shape,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        check_dims("FeatureGrid", &[shape.channels, shape.height, shape.width])?;
        if data.len() != shape.len() {
            return Err(Error::shape("FeatureGrid", shape.len(), data.len()));
        }
        check_finite("FeatureGrid", &data)?;
        Ok(Self { shape, data })
    }

    /// Build a grid from `f(cell, channel)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for cell in 0..shape.cells() {
            for ch in 0..shape.channels {
                data.push(f(cell, ch));
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn cells(&self) -> usize {
        self.shape.cells()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn cell(&self, cell: usize) -> &[f32] {
        let c = self.shape.channels;
        &self.data[cell * c..(cell + 1) * c]
    }

    pub fn cell_mut(&mut self, cell: usize) -> &mut [f32] {
        let c = self.shape.channels;
        &mut self.data[cell * c..(cell + 1) * c]
    }

    pub fn get(&self, y: usize, x: usize, ch: usize) -> f32 {
        self.data[(y * self.shape.width + x) * self.shape.channels + ch]
    }

    /// Per-cell L2 norm of the channel vector.
    pub fn cell_norms(&self) -> ScalarGrid {
        let data = (0..self.cells())
            .map(|c| l2_norm(self.cell(c)) as f32)
            .collect();
        ScalarGrid {
            height: self.shape.height,
            width: self.shape.width,
            data,
        }
    }

    pub(crate) fn expect_shape(&self, op: &'static str, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(op, shape, self.shape));
        }
        Ok(())
    }
}

/// `H x W` scalar field (confidence, density, visibility, activation).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ScalarGrid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        check_dims("ScalarGrid", &[height, width])?;
        if data.len() != height * width {
            return Err(Error::shape("ScalarGrid", height * width, data.len()));
        }
        check_finite("ScalarGrid", &data)?;
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> usize {
        self.data.len()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, cell: usize) -> f32 {
        self.data[cell]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn expect_dims(&self, op: &'static str, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::shape(op, dims, self.dims()));
        }
        Ok(())
    }
}

/// `H x W` boolean selection mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CellMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl CellMask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_bits(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::shape("CellMask", height * width, bits.len()));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn from_indices(
        height: usize,
        width: usize,
        indices: impl IntoIterator<Item = usize>,
    ) -> Result<Self> {
        let mut mask = Self::empty(height, width);
        for i in indices {
            if i >= mask.bits.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    cells: mask.bits.len(),
                });
            }
            mask.bits[i] = true;
        }
        Ok(mask)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn cells(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, cell: usize) -> bool {
        self.bits[cell]
    }

    pub fn set(&mut self, cell: usize, value: bool) {
        self.bits[cell] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Set cell indices in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn not(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    pub fn or(&self, other: &Self) -> Result<Self> {
        self.zip(other, "CellMask::or", |a, b| a || b)
    }

    pub fn and(&self, other: &Self) -> Result<Self> {
        self.zip(other, "CellMask::and", |a, b| a && b)
    }

    pub fn and_not(&self, other: &Self) -> Result<Self> {
        self.zip(other, "CellMask::and_not", |a, b| a && !b)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    fn zip(&self, other: &Self, op: &'static str, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::shape(op, self.dims(), other.dims()));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| f(a, b)).collect(),
        })
    }
}

/// Dense affine map `y = W x + b` with `W` stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    rows: usize,
    cols: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl LinearMap {
    pub fn new(rows: usize, cols: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        check_dims("LinearMap", &[rows, cols])?;
        if weights.len() != rows * cols {
            return Err(Error::shape("LinearMap weights", rows * cols, weights.len()));
        }
        if bias.len() != rows {
            return Err(Error::shape("LinearMap bias", rows, bias.len()));
        }
        check_finite("LinearMap", &weights)?;
        check_finite("LinearMap", &bias)?;
        Ok(Self {
            rows,
            cols,
            weights,
            bias,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.weights[i * n + i] = 1.0;
        }
        m
    }

    /// Weights uniform in `[-1/sqrt(cols), 1/sqrt(cols)]`, zero bias.
    pub fn seeded(rows: usize, cols: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        let weights = (0..rows * cols)
            .map(|_| rng.uniform(-bound, bound) as f32)
            .collect();
        Self {
            rows,
            cols,
            weights,
            bias: vec![0.0; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weight(&self, row: usize, col: usize) -> f32 {
        self.weights[row * self.cols + col]
    }

    pub fn with_bias(mut self, bias: Vec<f32>) -> Result<Self> {
        if bias.len() != self.rows {
            return Err(Error::shape("LinearMap bias", self.rows, bias.len()));
        }
        check_finite("LinearMap", &bias)?;
        self.bias = bias;
        Ok(self)
    }

    pub fn has_zero_bias(&self) -> bool {
        self.bias.iter().all(|&b| b == 0.0)
    }

    pub fn transpose(&self) -> Self {
        let mut weights = vec![0.0; self.weights.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                weights[c * self.rows + r] = self.weights[r * self.cols + c];
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            weights,
            bias: vec![0.0; self.cols],
        }
    }

    /// `out = W x + b`. Lengths must already match.
    pub fn apply_into(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            *o = (self.bias[r] as f64 + lane_dot(row, x)) as f32;
        }
    }

    pub fn apply_vec(&self, x: &[f32]) -> Result<Vec<f32>> {
        if x.len() != self.cols {
            return Err(Error::shape("LinearMap::apply_vec", self.cols, x.len()));
        }
        let mut out = vec![0.0; self.rows];
        self.apply_into(x, &mut out);
        Ok(out)
    }
}

/// 3x3 convolution kernel laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel3x3 {
    out_channels: usize,
    in_channels: usize,
    weights: Vec<f32>,
}

impl Kernel3x3 {
    pub fn new(out_channels: usize, in_channels: usize, weights: Vec<f32>) -> Result<Self> {
        check_dims("Kernel3x3", &[out_channels, in_channels])?;
        let n = out_channels * in_channels * 9;
        if weights.len() != n {
            return Err(Error::shape("Kernel3x3", n, weights.len()));
        }
        check_finite("Kernel3x3", &weights)?;
        Ok(Self {
            out_channels,
            in_channels,
            weights,
        })
    }

    pub fn zeros(out_channels: usize, in_channels: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            weights: vec![0.0; out_channels * in_channels * 9],
        }
    }

    /// Center tap 1 on the diagonal: convolution becomes the identity.
    pub fn delta(channels: usize) -> Self {
        let mut k = Self::zeros(channels, channels);
        for c in 0..channels {
            k.weights[Self::offset(channels, c, c, 1, 1)] = 1.0;
        }
        k
    }

    /// Weights uniform in `[-1/sqrt(9 in), 1/sqrt(9 in)]`.
    pub fn seeded(out_channels: usize, in_channels: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / ((9 * in_channels) as f64).sqrt();
        let weights = (0..out_channels * in_channels * 9)
            .map(|_| rng.uniform(-bound, bound) as f32)
            .collect();
        Self {
            out_channels,
            in_channels,
            weights,
        }
    }

    fn offset(in_channels: usize, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * in_channels + i) * 3 + ky) * 3 + kx
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn weight(&self, o: usize, i: usize, ky: usize, kx: usize) -> f32 {
        self.weights[Self::offset(self.in_channels, o, i, ky, kx)]
    }
}

/// A sparse set of cells with their channel vectors, ascending by index.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCells {
    pub shape: Shape,
    pub indices: Vec<u32>,
    pub values: Vec<f32>,
}

impl SparseCells {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        let c = self.shape.channels;
        &self.values[i * c..(i + 1) * c]
    }

    pub fn mask(&self) -> CellMask {
        let mut mask = CellMask::empty(self.shape.height, self.shape.width);
        for &i in &self.indices {
            mask.set(i as usize, true);
        }
        mask
    }
}

/// Number of cells picked by a selection ratio over `n` cells: `floor(ratio * n)`.
///
/// A 1e-9 slack absorbs binary rounding of ratios like 0.29 so that the
/// count matches exact decimal arithmetic.
pub fn ratio_count(ratio: f64, n: usize) -> usize {
    if ratio <= 0.0 {
        return 0;
    }
    ((ratio * n as f64 + 1e-9).floor() as usize).min(n)
}

/// Min-max normalization to `[0, 1]`; a constant map becomes all zeros.
pub fn minmax_normalize(g: &ScalarGrid) -> ScalarGrid {
    let (lo, hi) = g
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if g.data.is_empty() || hi <= lo {
        return ScalarGrid::zeros(g.height, g.width);
    }
    let span = hi as f64 - lo as f64;
    g.map(|v| (((v as f64 - lo as f64) / span) as f32).clamp(0.0, 1.0))
}

/// The `k` eligible cells with the highest score, ordered by descending
/// score and then ascending index.
pub fn topk_cells(score: &ScalarGrid, k: usize, eligible: &CellMask) -> Result<Vec<usize>> {
    eligible_dims_match(score, eligible, "topk_cells")?;
    let mut cells: Vec<usize> = eligible.indices();
    if k > cells.len() {
        return Err(Error::InsufficientEligible {
            requested: k,
            available: cells.len(),
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let by_rank = |&a: &usize, &b: &usize| {
        score.data[b]
            .total_cmp(&score.data[a])
            .then_with(|| a.cmp(&b))
    };
    if k < cells.len() {
        cells.select_nth_unstable_by(k - 1, by_rank);
        cells.truncate(k);
    }
    cells.sort_unstable_by(by_rank);
    Ok(cells)
}

fn eligible_dims_match(score: &ScalarGrid, mask: &CellMask, op: &'static str) -> Result<()> {
    if score.dims() != mask.dims() {
        return Err(Error::shape(op, score.dims(), mask.dims()));
    }
    Ok(())
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    lane_dot(v, v).sqrt()
}

pub(crate) fn dot(a: &[f32], b: &[f32]) -> f64 {
    lane_dot(a, b)
}

/// Cosine similarity given precomputed L2 norms; bit-identical to
/// [`cosine_similarity`].
pub(crate) fn cosine_with_norms(a: &[f32], norm_a: f64, b: &[f32], norm_b: f64) -> f32 {
    if norm_a < SIMILARITY_EPS || norm_b < SIMILARITY_EPS {
        return 0.0;
    }
    ((dot(a, b) / (norm_a * norm_b)) as f32).clamp(-1.0, 1.0)
}

/// Cosine similarity; 0 when either operand has (near) zero norm.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_similarity", a.len(), b.len()));
    }
    Ok(cosine_with_norms(a, l2_norm(a), b, l2_norm(b)))
}

/// `(v - mean) / sqrt(var + eps)` with population variance, no affine.
pub fn layer_norm(v: &[f32], eps: f64) -> Vec<f32> {
    let mut out = vec![0.0; v.len()];
    layer_norm_into(v, eps, &mut out);
    out
}

pub(crate) fn layer_norm_into(v: &[f32], eps: f64, out: &mut [f32]) {
    if v.is_empty() {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v
        .iter()
        .map(|&x| {
            let d = x as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let inv = 1.0 / (var + eps).sqrt();
    for (o, &x) in out.iter_mut().zip(v) {
        *o = ((x as f64 - mean) * inv) as f32;
    }
}

/// Per-cell layer normalization over channels. Cells outside `cover`
/// (when given) are written as zeros.
pub fn layer_norm_cells(g: &FeatureGrid, eps: f64, cover: Option<&CellMask>) -> Result<FeatureGrid> {
    if let Some(m) = cover {
        if m.dims() != (g.height(), g.width()) {
            return Err(Error::shape("layer_norm_cells", (g.height(), g.width()), m.dims()));
        }
    }
    let c = g.channels();
    let mut out = FeatureGrid::zeros(g.shape());
    out.data
        .par_chunks_mut(c)
        .enumerate()
        .for_each(|(cell, dst)| {
            if cover.is_none_or(|m| m.get(cell)) {
                layer_norm_into(g.cell(cell), eps, dst);
            }
        });
    Ok(out)
}

/// Dot product in f64 with eight interleaved partial sums, combined in a
/// fixed order. Vectorizes while staying deterministic.
fn lane_dot(a: &[f32], b: &[f32]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (xa, xb) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += xa[l] as f64 * xb[l] as f64;
        }
    }
    let mut tail = 0.0f64;
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x as f64 * y as f64;
    }
    ((lanes[0] + lanes[4]) + (lanes[2] + lanes[6])) + ((lanes[1] + lanes[5]) + (lanes[3] + lanes[7])) + tail
}

/// Per-cell (1x1) affine map over channels.
pub fn apply_linear(m: &LinearMap, g: &FeatureGrid) -> Result<FeatureGrid> {
    if m.cols != g.channels() {
        return Err(Error::shape("apply_linear", m.cols, g.channels()));
    }
    let mut out = FeatureGrid::zeros(g.shape().with_channels(m.rows));
    out.data
        .par_chunks_mut(m.rows)
        .enumerate()
        .for_each(|(cell, dst)| m.apply_into(g.cell(cell), dst));
    Ok(out)
}

/// Same-size 3x3 convolution, zero padding 1, stride 1, no bias.
pub fn conv2d_3x3(g: &FeatureGrid, kernel: &Kernel3x3) -> Result<FeatureGrid> {
    if kernel.in_channels != g.channels() {
        return Err(Error::shape("conv2d_3x3", kernel.in_channels, g.channels()));
    }
    let (h, w) = (g.height(), g.width());
    let (ci, co) = (kernel.in_channels, kernel.out_channels);
    // Repack to [ky][kx][in][out] so the innermost loop is contiguous.
    let mut packed = vec![0.0f32; 9 * ci * co];
    for o in 0..co {
        for i in 0..ci {
            for ky in 0..3 {
                for kx in 0..3 {
                    packed[((ky * 3 + kx) * ci + i) * co + o] = kernel.weight(o, i, ky, kx);
                }
            }
        }
    }
    let mut out = FeatureGrid::zeros(g.shape().with_channels(co));
    out.data
        .par_chunks_mut(w * co)
        .enumerate()
        .for_each(|(y, row)| {
            let mut acc = vec![0.0f64; co];
            for x in 0..w {
                acc.iter_mut().for_each(|a| *a = 0.0);
                for ky in 0..3 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let sx = x as isize + kx as isize - 1;
                        if sx < 0 || sx >= w as isize {
                            continue;
                        }
                        let src = g.cell(sy as usize * w + sx as usize);
                        let tap = &packed[(ky * 3 + kx) * ci * co..(ky * 3 + kx + 1) * ci * co];
                        for (i, &v) in src.iter().enumerate() {
                            if v == 0.0 {
                                continue;
                            }
                            let v = v as f64;
                            for (a, &k) in acc.iter_mut().zip(&tap[i * co..(i + 1) * co]) {
                                *a += k as f64 * v;
                            }
                        }
                    }
                }
                for (dst, &a) in row[x * co..(x + 1) * co].iter_mut().zip(&acc) {
                    *dst = a as f32;
                }
            }
        });
    Ok(out)
}

/// Bilinear interpolation at continuous cell coordinates `(x, y)`, with `x`
/// running along the width. Corners outside the grid read zeros.
pub fn bilinear_sample(g: &FeatureGrid, x: f64, y: f64) -> Vec<f32> {
    let mut out = vec![0.0; g.channels()];
    bilinear_sample_into(g, x, y, &mut out);
    out
}

pub(crate) fn bilinear_sample_into(g: &FeatureGrid, x: f64, y: f64, out: &mut [f32]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    if !x.is_finite() || !y.is_finite() {
        return;
    }
    let (h, w) = (g.height() as f64, g.width() as f64);
    if x <= -1.0 || y <= -1.0 || x >= w || y >= h {
        return;
    }
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1.0, y0, fx * (1.0 - fy)),
        (x0, y0 + 1.0, (1.0 - fx) * fy),
        (x0 + 1.0, y0 + 1.0, fx * fy),
    ];
    let mut acc = vec![0.0f64; g.channels()];
    for (cx, cy, wt) in corners {
        if wt == 0.0 || cx < 0.0 || cy < 0.0 || cx >= w || cy >= h {
            continue;
        }
        let cell = g.cell(cy as usize * g.width() + cx as usize);
        for (a, &v) in acc.iter_mut().zip(cell) {
            *a += wt * v as f64;
        }
    }
    for (o, a) in out.iter_mut().zip(acc) {
        *o = a as f32;
    }
}

/// Elementwise maximum over a nonempty list of equally shaped grids.
pub fn cellwise_max(gs: &[&FeatureGrid]) -> Result<FeatureGrid> {
    let (first, rest) = gs.split_first().ok_or(Error::NoInputs)?;
    let mut out = (*first).clone();
    for g in rest {
        g.expect_shape("cellwise_max", out.shape())?;
        for (o, &v) in out.data.iter_mut().zip(&g.data) {
            *o = o.max(v);
        }
    }
    Ok(out)
}

/// Channel-wise concatenation `[a, b]` per cell.
pub fn concat_channels(a: &FeatureGrid, b: &FeatureGrid) -> Result<FeatureGrid> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::shape(
            "concat_channels",
            (a.height(), a.width()),
            (b.height(), b.width()),
        ));
    }
    let shape = a.shape().with_channels(a.channels() + b.channels());
    let mut data = Vec::with_capacity(shape.len());
    for cell in 0..a.cells() {
        data.extend_from_slice(a.cell(cell));
        data.extend_from_slice(b.cell(cell));
    }
    Ok(FeatureGrid { shape, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(data: &[f32]) -> ScalarGrid {
        ScalarGrid::from_vec(1, data.len(), data.to_vec()).unwrap()
    }

    fn row_grid(channels: usize, width: usize, data: &[f32]) -> FeatureGrid {
        FeatureGrid::from_vec(Shape::new(channels, 1, width), data.to_vec()).unwrap()
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&scalar(&[0.0, 2.0, 4.0])).data(), &[0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&scalar(&[7.0, 7.0, 7.0])).data(), &[0.0, 0.0, 0.0]);
        assert_eq!(minmax_normalize(&scalar(&[-1.0, 0.0, 3.0])).data(), &[0.0, 0.25, 1.0]);
    }

    #[test]
    fn topk_examples() {
        let all = CellMask::full(1, 4);
        assert_eq!(topk_cells(&scalar(&[9.0, 1.0, 5.0, 5.0]), 2, &all).unwrap(), vec![0, 2]);
        assert!(topk_cells(&scalar(&[9.0, 1.0, 5.0, 5.0]), 0, &all).unwrap().is_empty());
        let all3 = CellMask::full(1, 3);
        assert_eq!(topk_cells(&scalar(&[3.0, 3.0, 3.0]), 2, &all3).unwrap(), vec![0, 1]);
    }

    #[test]
    fn topk_insufficient() {
        let m = CellMask::from_indices(1, 4, [1]).unwrap();
        let err = topk_cells(&scalar(&[1.0, 2.0, 3.0, 4.0]), 2, &m).unwrap_err();
        assert_eq!(err, Error::InsufficientEligible { requested: 2, available: 1 });
        assert!(err.to_string().contains("insufficient eligible cells"));
    }

    #[test]
    fn topk_respects_eligibility() {
        let m = CellMask::from_indices(1, 4, [1, 3]).unwrap();
        assert_eq!(topk_cells(&scalar(&[9.0, 1.0, 5.0, 2.0]), 2, &m).unwrap(), vec![3, 1]);
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-7);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f32::consts::FRAC_1_SQRT_2).abs() < 1e-6);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        assert!(layer_norm(&[5.0; 4], 1e-5).iter().all(|v| v.abs() < 1e-6));
        let v = layer_norm(&[1.0, -1.0], 1e-12);
        assert!((v[0] - 1.0).abs() < 1e-6 && (v[1] + 1.0).abs() < 1e-6);
        // var = 1, so the output is (x - 1) / sqrt(1 + 1e-5).
        let v = layer_norm(&[0.0, 2.0], 1e-5);
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((v[0] as f64 + expect).abs() < 1e-6);
        assert!((v[1] as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn linear_examples() {
        let g = FeatureGrid::from_fn(Shape::new(3, 2, 2), |c, ch| (c * 3 + ch) as f32 - 4.5);
        assert_eq!(apply_linear(&LinearMap::identity(3), &g).unwrap(), g);

        let m = LinearMap::zeros(2, 3).with_bias(vec![0.5, -2.0]).unwrap();
        let out = apply_linear(&m, &g).unwrap();
        for c in 0..4 {
            assert_eq!(out.cell(c), &[0.5, -2.0]);
        }

        let m = LinearMap::new(2, 2, vec![1.0, 1.0, 0.0, 2.0], vec![0.0, 0.0]).unwrap();
        let out = apply_linear(&m, &row_grid(2, 1, &[3.0, 4.0])).unwrap();
        assert_eq!(out.cell(0), &[7.0, 8.0]);

        assert!(apply_linear(&LinearMap::identity(2), &g).is_err());
    }

    #[test]
    fn conv_examples() {
        let g = FeatureGrid::from_fn(Shape::new(2, 3, 4), |c, ch| (c as f32 - 5.0) * (ch as f32 + 1.0));
        assert_eq!(conv2d_3x3(&g, &Kernel3x3::delta(2)).unwrap(), g);
        let zero = conv2d_3x3(&g, &Kernel3x3::zeros(3, 2)).unwrap();
        assert_eq!(zero.channels(), 3);
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(conv2d_3x3(&g, &Kernel3x3::delta(3)).is_err());
    }

    #[test]
    fn conv_average_one_hot_corner_and_center() {
        let avg = Kernel3x3::new(1, 1, vec![1.0 / 9.0; 9]).unwrap();
        // One-hot at (1, 1) of a 4x4 grid: the 3x3 block around it is 1/9.
        let g = FeatureGrid::from_fn(Shape::new(1, 4, 4), |c, _| if c == 5 { 1.0 } else { 0.0 });
        let out = conv2d_3x3(&g, &avg).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = if y <= 2 && x <= 2 { 1.0 / 9.0 } else { 0.0 };
                assert!((out.get(y, x, 0) - expect).abs() < 1e-7, "({y},{x})");
            }
        }
        // One-hot in the corner: the plateau is clipped to 2x2.
        let g = FeatureGrid::from_fn(Shape::new(1, 4, 4), |c, _| if c == 0 { 1.0 } else { 0.0 });
        let out = conv2d_3x3(&g, &avg).unwrap();
        let set: Vec<usize> = (0..16).filter(|&c| out.cell(c)[0] > 0.0).collect();
        assert_eq!(set, vec![0, 1, 4, 5]);
    }

    #[test]
    fn bilinear_examples() {
        let g = FeatureGrid::from_fn(Shape::new(2, 3, 3), |c, ch| (c * 2 + ch) as f32);
        assert_eq!(bilinear_sample(&g, 1.0, 2.0), g.cell(7));
        let mid = bilinear_sample(&g, 0.5, 1.0);
        assert_eq!(mid, vec![(6.0 + 8.0) / 2.0, (7.0 + 9.0) / 2.0]);
        assert_eq!(bilinear_sample(&g, -5.0, -5.0), vec![0.0, 0.0]);
        // Half a cell past the last column reads half the edge value.
        assert_eq!(bilinear_sample(&g, 2.5, 0.0), vec![2.0, 2.5]);
    }

    #[test]
    fn cellwise_max_examples() {
        let a = row_grid(1, 2, &[1.0, 5.0]);
        let b = row_grid(1, 2, &[4.0, 2.0]);
        assert_eq!(cellwise_max(&[&a]).unwrap(), a);
        assert_eq!(cellwise_max(&[&a, &b]).unwrap().data(), &[4.0, 5.0]);
        let neg = row_grid(1, 2, &[-1.0, -5.0]);
        assert_eq!(cellwise_max(&[&a, &neg]).unwrap(), a);
        assert_eq!(cellwise_max(&[]).unwrap_err(), Error::NoInputs);
        assert!(cellwise_max(&[&a, &row_grid(1, 3, &[0.0; 3])]).is_err());
    }

    #[test]
    fn ratio_counts() {
        assert_eq!(ratio_count(0.01, 176 * 48), 84);
        assert_eq!(ratio_count(0.05, 176 * 48), 422);
        assert_eq!(ratio_count(0.10, 176 * 48), 844);
        assert_eq!(ratio_count(0.29, 100), 29);
        assert_eq!(ratio_count(1.0, 10), 10);
        assert_eq!(ratio_count(0.0, 10), 0);
    }

    #[test]
    fn grid_validation() {
        assert!(FeatureGrid::from_vec(Shape::new(1, 1, 2), vec![0.0]).is_err());
        assert!(FeatureGrid::from_vec(Shape::new(1, 1, 1), vec![f32::NAN]).is_err());
        assert!(FeatureGrid::from_vec(Shape::new(0, 1, 1), vec![]).is_err());
        assert!(ScalarGrid::from_vec(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn mask_ops() {
        let a = CellMask::from_indices(2, 2, [0, 1]).unwrap();
        let b = CellMask::from_indices(2, 2, [1, 3]).unwrap();
        assert_eq!(a.or(&b).unwrap().indices(), vec![0, 1, 3]);
        assert_eq!(a.and(&b).unwrap().indices(), vec![1]);
        assert_eq!(a.and_not(&b).unwrap().indices(), vec![0]);
        assert_eq!(a.not().indices(), vec![2, 3]);
        assert!(CellMask::from_indices(2, 2, [1]).unwrap().is_subset(&a));
        assert!(CellMask::from_indices(2, 2, [4]).is_err());
    }
}
