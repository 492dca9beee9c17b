use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fca::{refine_confidence, select_foreground};
use crate::sim::observe::AgentObservation;
use crate::tensor::{ratio_count, topk_cells, CellMask};

/// Which cells an agent shares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingStrategy {
    /// Top-k of the density-refined predicted confidence.
    PredFg,
    /// Every ground-truth foreground cell.
    GtFg,
    /// The densest ground-truth background cells, under the same budget.
    GtBg,
}

impl SharingStrategy {
    pub const ALL: [SharingStrategy; 3] = [Self::PredFg, Self::GtFg, Self::GtBg];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::PredFg => "pred_fg",
            Self::GtFg => "gt_fg",
            Self::GtBg => "gt_bg",
        }
    }
}

impl fmt::Display for SharingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SharingStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::param(format!("unknown strategy {s:?} (expected pred_fg, gt_fg or gt_bg)")))
    }
}

pub fn strategy_mask(kind: SharingStrategy, obs: &AgentObservation, ratio: f64) -> Result<CellMask> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::param(format!("selection ratio {ratio} outside (0, 1]")));
    }
    match kind {
        SharingStrategy::PredFg => {
            let refined = refine_confidence(&obs.conf, &obs.density)?;
            select_foreground(&refined, ratio)
        }
        SharingStrategy::GtFg => Ok(obs.gt_fg.clone()),
        SharingStrategy::GtBg => {
            let k = ratio_count(ratio, obs.gt_bg.cells()).min(obs.gt_bg.count());
            let cells = topk_cells(&obs.density, k, &obs.gt_bg)?;
            CellMask::from_indices(obs.gt_bg.height(), obs.gt_bg.width(), cells)
        }
    }
}
