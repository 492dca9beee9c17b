use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{minmax_normalize, CellMask, FeatureGrid};

/// Foreground-localization proxy scores. Undefined ratios are reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub recall: f64,
    pub precision: f64,
    pub iou: f64,
    pub mean_fg_activation: f64,
    pub mean_bg_activation: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Score a feature grid by thresholding its min-max normalized per-cell
/// L2 activation against the ground-truth foreground.
pub fn score_fused(fused: &FeatureGrid, gt_fg: &CellMask, act_threshold: f64) -> Result<Metrics> {
    if gt_fg.dims() != (fused.height(), fused.width()) {
        return Err(Error::shape("score_fused", (fused.height(), fused.width()), gt_fg.dims()));
    }
    let act = minmax_normalize(&fused.cell_norms());
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    let (mut fg_sum, mut bg_sum) = (0.0f64, 0.0f64);
    for c in 0..act.cells() {
        let a = act.get(c) as f64;
        let positive = a >= act_threshold;
        if gt_fg.get(c) {
            fg_sum += a;
            if positive { tp += 1 } else { fneg += 1 }
        } else {
            bg_sum += a;
            if positive { fp += 1 }
        }
    }
    let n_fg = gt_fg.count();
    Ok(Metrics {
        recall: ratio(tp, tp + fneg),
        precision: ratio(tp, tp + fp),
        iou: ratio(tp, tp + fp + fneg),
        mean_fg_activation: if n_fg == 0 { 0.0 } else { fg_sum / n_fg as f64 },
        mean_bg_activation: if n_fg == act.cells() { 0.0 } else { bg_sum / (act.cells() - n_fg) as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn all_zero_features() {
        let g = FeatureGrid::zeros(Shape::new(3, 2, 2));
        let m = score_fused(&g, &CellMask::from_indices(2, 2, [0]).unwrap(), 0.5).unwrap();
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.iou, 0.0);
    }

    #[test]
    fn perfect_match() {
        let gt = CellMask::from_indices(3, 3, [1, 4, 5]).unwrap();
        let g = FeatureGrid::from_fn(Shape::new(1, 3, 3), |c, _| if gt.get(c) { 1.0 } else { 0.0 });
        let m = score_fused(&g, &gt, 0.5).unwrap();
        assert_eq!((m.recall, m.precision, m.iou), (1.0, 1.0, 1.0));
        assert_eq!(m.mean_fg_activation, 1.0);
        assert_eq!(m.mean_bg_activation, 0.0);
    }

    #[test]
    fn half_recall() {
        let gt = CellMask::from_indices(1, 4, [0, 1]).unwrap();
        let g = FeatureGrid::from_vec(Shape::new(1, 1, 4), vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        let m = score_fused(&g, &gt, 0.5).unwrap();
        assert_eq!(m.recall, 0.5);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.iou, 0.5);
    }

    #[test]
    fn negative_features_use_magnitude() {
        let gt = CellMask::from_indices(1, 2, [1]).unwrap();
        let g = FeatureGrid::from_vec(Shape::new(1, 1, 2), vec![0.1, -3.0]).unwrap();
        assert_eq!(score_fused(&g, &gt, 0.5).unwrap().recall, 1.0);
    }
}
