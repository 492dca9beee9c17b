//! File output: atomic writes, CSV encoding and grayscale images.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sparsecomm_core::sim::RoundOutput;
use sparsecomm_core::tensor::{minmax_normalize, CellMask, FeatureGrid};

use crate::error::{AppError, Result};

/// Write `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| AppError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| AppError::io(path, e))?;
    tmp.persist(path).map_err(|e| AppError::io(path, e.error))?;
    Ok(())
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| AppError::Csv(e.into_error().into()))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows)?)
}

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Per-cell activation (L2 norm over channels), min-max scaled to 0..=255.
    pub fn activation(g: &FeatureGrid) -> Self {
        let norm = minmax_normalize(&g.cell_norms());
        Self {
            width: g.width(),
            height: g.height(),
            pixels: norm.data().iter().map(|&v| (v * 255.0).round() as u8).collect(),
        }
    }

    /// Shared cells white on black.
    pub fn mask(m: &CellMask) -> Self {
        Self {
            width: m.width(),
            height: m.height(),
            pixels: m.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
        }
    }

    /// Nearest-neighbor integer upscale.
    pub fn upscale(&self, k: usize) -> Self {
        if k <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width * k, self.height * k);
        let pixels = (0..h * w)
            .map(|i| self.pixels[(i / w / k) * self.width + (i % w) / k])
            .collect();
        Self {
            width: w,
            height: h,
            pixels,
        }
    }

    /// Binary PGM (P5) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Write pre-fusion, post-fusion and shared-mask images for every agent of
/// `round` into `dir`. Returns the written paths in order.
pub fn export_heatmaps(round: &RoundOutput, dir: &Path, scale: usize) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for a in &round.agents {
        let views = [
            ("pre", GrayImage::activation(&a.observation.features)),
            ("post", GrayImage::activation(&a.fusion.fused)),
            ("shared", GrayImage::mask(&a.shared_mask)),
        ];
        for (name, img) in views {
            let path = dir.join(format!("agent{}_{name}.pgm", a.agent));
            write_atomic(&path, &img.upscale(scale).to_pgm())?;
            written.push(path);
        }
    }
    Ok(written)
}
