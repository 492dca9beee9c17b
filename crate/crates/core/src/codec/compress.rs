use crate::codec::f16::dequantize_finite;
use crate::codec::wire::SparseMessage;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{CellMask, FeatureGrid, LinearMap, Shape, SparseCells};

/// Channel compressor and its matching decompressor. `up` is always the
/// transpose of `down`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressionPair {
    down: LinearMap,
    up: LinearMap,
}

impl CompressionPair {
    pub fn from_down(down: LinearMap) -> Self {
        let up = down.transpose();
        Self { down, up }
    }

    /// Seeded `C' x C` projection with orthonormal rows (Gram-Schmidt over
    /// SplitMix64-uniform draws), so `down * up` is the identity on `R^C'`.
    pub fn seeded(channels: usize, compressed: usize, seed: u64) -> Result<Self> {
        if compressed == 0 || compressed > channels {
            return Err(Error::param(format!(
                "cannot compress {channels} channels to {compressed}"
            )));
        }
        let mut rng = SplitMix64::new(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(compressed);
        while rows.len() < compressed {
            let mut v: Vec<f64> = (0..channels).map(|_| rng.uniform(-1.0, 1.0)).collect();
            // Modified Gram-Schmidt, applied twice for numerical safety.
            for _ in 0..2 {
                for r in &rows {
                    let d: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(r).for_each(|(x, a)| *x -= d * a);
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-6 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n);
            rows.push(v);
        }
        let weights = rows.iter().flatten().map(|&x| x as f32).collect();
        let down = LinearMap::new(compressed, channels, weights, vec![0.0; compressed])?;
        Ok(Self::from_down(down))
    }

    /// Keep the first `compressed` coordinates.
    pub fn selector(channels: usize, compressed: usize) -> Result<Self> {
        let mut weights = vec![0.0; compressed * channels];
        for i in 0..compressed.min(channels) {
            weights[i * channels + i] = 1.0;
        }
        Ok(Self::from_down(LinearMap::new(
            compressed,
            channels,
            weights,
            vec![0.0; compressed],
        )?))
    }

    pub fn down(&self) -> &LinearMap {
        &self.down
    }

    pub fn up(&self) -> &LinearMap {
        &self.up
    }

    pub fn channels(&self) -> usize {
        self.down.cols()
    }

    pub fn compressed_channels(&self) -> usize {
        self.down.rows()
    }
}

/// Apply `down` to every cell vector; indices are unchanged.
pub fn compress_cells(cells: &SparseCells, pair: &CompressionPair) -> Result<SparseCells> {
    let c = cells.shape.channels;
    if c != pair.channels() {
        return Err(Error::shape("compress_cells", pair.channels(), c));
    }
    let cc = pair.compressed_channels();
    let mut values = vec![0.0; cells.len() * cc];
    for (i, dst) in values.chunks_mut(cc).enumerate() {
        pair.down.apply_into(cells.vector(i), dst);
    }
    Ok(SparseCells {
        shape: cells.shape.with_channels(cc),
        indices: cells.indices.clone(),
        values,
    })
}

/// Scatter a message back to a dense zero-initialized grid through `up`.
/// Returns the grid and the mask of listed cells.
pub fn decompress_scatter(
    msg: &SparseMessage,
    pair: &CompressionPair,
) -> Result<(FeatureGrid, CellMask)> {
    if msg.channels_compressed as usize != pair.compressed_channels() {
        return Err(Error::shape(
            "decompress_scatter",
            pair.compressed_channels(),
            msg.channels_compressed,
        ));
    }
    let (h, w) = (msg.height as usize, msg.width as usize);
    let mut grid = FeatureGrid::zeros(Shape::new(pair.channels(), h, w));
    let mut mask = CellMask::empty(h, w);
    let mut compressed = vec![0.0f32; pair.compressed_channels()];
    for (i, &cell) in msg.indices().iter().enumerate() {
        let cell = cell as usize;
        if cell >= h * w {
            return Err(Error::IndexOutOfRange { index: cell, cells: h * w });
        }
        for (dst, &b) in compressed.iter_mut().zip(msg.cell_payload(i)) {
            *dst = dequantize_finite(b);
        }
        pair.up.apply_into(&compressed, grid.cell_mut(cell));
        mask.set(cell, true);
    }
    Ok((grid, mask))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::wire::encode_message;

    #[test]
    fn compressed_width() {
        let pair = CompressionPair::seeded(256, 16, 1).unwrap();
        let cells = SparseCells {
            shape: Shape::new(256, 4, 4),
            indices: vec![0, 5],
            values: vec![0.5; 512],
        };
        let out = compress_cells(&cells, &pair).unwrap();
        assert_eq!(out.values.len(), 32);
        assert_eq!(out.shape.channels, 16);
        assert_eq!(out.indices, cells.indices);
    }

    #[test]
    fn zero_vectors_stay_zero() {
        let pair = CompressionPair::seeded(8, 2, 4).unwrap();
        let cells = SparseCells {
            shape: Shape::new(8, 2, 2),
            indices: vec![1, 2, 3],
            values: vec![0.0; 24],
        };
        assert!(compress_cells(&cells, &pair).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn selector_keeps_leading_coordinates() {
        let pair = CompressionPair::selector(4, 2).unwrap();
        let cells = SparseCells {
            shape: Shape::new(4, 1, 1),
            indices: vec![0],
            values: vec![1.0, 2.0, 3.0, 4.0],
        };
        assert_eq!(compress_cells(&cells, &pair).unwrap().values, vec![1.0, 2.0]);
    }

    #[test]
    fn transpose_is_up() {
        let pair = CompressionPair::seeded(6, 3, 2).unwrap();
        assert_eq!(pair.up(), &pair.down().transpose());
    }

    #[test]
    fn rows_are_orthonormal() {
        let pair = CompressionPair::seeded(32, 8, 77).unwrap();
        let d = pair.down();
        for a in 0..8 {
            for b in 0..8 {
                let dot: f64 = (0..32).map(|j| d.weight(a, j) as f64 * d.weight(b, j) as f64).sum();
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scatter_selector_roundtrip() {
        let pair = CompressionPair::selector(4, 2).unwrap();
        let cells = SparseCells {
            shape: Shape::new(4, 2, 2),
            indices: vec![3],
            values: vec![1.5, -2.0, 7.0, 9.0],
        };
        let bytes = encode_message(1, &compress_cells(&cells, &pair).unwrap()).unwrap();
        let msg = SparseMessage::decode(&bytes).unwrap();
        let (grid, mask) = decompress_scatter(&msg, &pair).unwrap();
        assert_eq!(grid.cell(3), &[1.5, -2.0, 0.0, 0.0]);
        assert_eq!(mask.indices(), vec![3]);
        assert!(grid.cell(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_message_scatter() {
        let pair = CompressionPair::seeded(4, 2, 0).unwrap();
        let msg = SparseMessage::new(0, 3, 3, 2, vec![], vec![]).unwrap();
        let (grid, mask) = decompress_scatter(&msg, &pair).unwrap();
        assert!(mask.is_empty());
        assert!(grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infinities_are_clamped() {
        let pair = CompressionPair::selector(1, 1).unwrap();
        let msg = SparseMessage::new(0, 1, 2, 1, vec![0, 1], vec![0x7c00, 0xfc00]).unwrap();
        let (grid, _) = decompress_scatter(&msg, &pair).unwrap();
        assert_eq!(grid.data(), &[65504.0, -65504.0]);
    }

    #[test]
    fn invalid_pairs() {
        assert!(CompressionPair::seeded(4, 8, 0).is_err());
        assert!(CompressionPair::seeded(4, 0, 0).is_err());
        let pair = CompressionPair::seeded(4, 2, 0).unwrap();
        let msg = SparseMessage::new(0, 1, 1, 3, vec![0], vec![0; 3]).unwrap();
        assert!(decompress_scatter(&msg, &pair).is_err());
    }
}
