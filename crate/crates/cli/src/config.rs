//! Experiment configuration, loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sparsecomm_core::cbp::{CurriculumState, MiningOptions};
use sparsecomm_core::fca::Selection;
use sparsecomm_core::sim::{
    Mode, ObservationParams, ParamKind, PipelineConfig, SceneParams, SharingStrategy, MAX_AGENTS,
};

use crate::error::AppError;

/// Named BEV grid sizes (width x height in cells).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridPreset {
    /// 176 x 48.
    #[default]
    Opv2vLike,
    /// 126 x 50.
    DairLike,
    /// `width` and `height` from the `[grid]` table.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub preset: GridPreset,
    pub width: Option<usize>,
    pub height: Option<usize>,
    pub meters_per_cell: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            preset: GridPreset::Opv2vLike,
            width: None,
            height: None,
            meters_per_cell: 1.6,
        }
    }
}

impl GridConfig {
    /// `(height, width)` in cells.
    pub fn dims(&self) -> (usize, usize) {
        match self.preset {
            GridPreset::Opv2vLike => (48, 176),
            GridPreset::DairLike => (50, 126),
            GridPreset::Custom => (self.height.unwrap_or(0), self.width.unwrap_or(0)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub r0: f64,
    pub gamma: f64,
    pub period: u32,
    pub tau: f64,
    /// Epoch from which the background ratio is forced to 0; omit to
    /// disable.
    pub cutoff: Option<u32>,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        let c = CurriculumState::default();
        Self {
            r0: c.r0,
            gamma: c.gamma,
            period: c.period,
            tau: c.tau,
            cutoff: c.final_cutoff_epoch,
        }
    }
}

/// Random scene ranges; the extent comes from `[grid]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub agents: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub min_object_size: usize,
    pub max_object_size: usize,
    pub occluders: usize,
    pub min_occluder_size: usize,
    pub max_occluder_size: usize,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let p = SceneParams::default();
        Self {
            agents: p.agents,
            min_objects: p.min_objects,
            max_objects: p.max_objects,
            min_object_size: p.min_object_size,
            max_object_size: p.max_object_size,
            occluders: p.occluders,
            min_occluder_size: p.min_occluder_size,
            max_occluder_size: p.max_occluder_size,
        }
    }
}

/// Sensor model; the channel count comes from the top-level `channels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub n_rays: usize,
    pub max_range: f64,
    pub sigma: f64,
    pub conf_gain: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        let p = ObservationParams::default();
        Self {
            n_rays: p.n_rays,
            max_range: p.max_range,
            sigma: p.sigma,
            conf_gain: p.conf_gain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandwidthConfig {
    pub neighbors: u64,
    pub rate_hz: f64,
    /// Reference link capacity for the `within_limit` column.
    pub limit_mbps: f64,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        Self {
            neighbors: 4,
            rate_hz: 10.0,
            limit_mbps: 28.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub sweep_csv: String,
    pub curriculum_csv: String,
    pub bandwidth_csv: String,
    pub images_dir: String,
    /// Integer pixel upscale for exported images.
    pub image_scale: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            sweep_csv: "sweep.csv".into(),
            curriculum_csv: "curriculum.csv".into(),
            bandwidth_csv: "bandwidth.csv".into(),
            images_dir: "images".into(),
            image_scale: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channels: usize,
    pub compression_ratio: usize,
    pub ratios: Vec<f64>,
    pub strategies: Vec<SharingStrategy>,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    /// Epochs simulated per seed in a sweep (0..epochs).
    pub epochs: u32,
    /// Epochs traced by `curriculum` (0..curriculum_epochs).
    pub curriculum_epochs: u32,
    pub param_seed: u64,
    pub params: ParamKind,
    pub budget_bits: u64,
    pub act_threshold: f64,
    pub deform_points: usize,
    pub ln_eps: f64,
    pub cbp_uses_refined: bool,
    pub mining: MiningOptions,
    pub grid: GridConfig,
    pub curriculum: CurriculumConfig,
    pub scene: SceneConfig,
    pub observation: ObservationConfig,
    pub bandwidth: BandwidthConfig,
    pub output: OutputConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            channels: p.observation.channels,
            compression_ratio: p.compression_ratio,
            ratios: vec![0.01, 0.05, 0.10],
            strategies: SharingStrategy::ALL.to_vec(),
            mode: Mode::Train,
            seeds: vec![0, 1],
            epochs: 1,
            curriculum_epochs: 25,
            param_seed: p.param_seed,
            params: p.params,
            budget_bits: p.budget_bits,
            act_threshold: p.act_threshold,
            deform_points: p.deform_points,
            ln_eps: p.ln_eps,
            cbp_uses_refined: p.cbp_uses_refined,
            mining: p.mining,
            grid: GridConfig::default(),
            curriculum: CurriculumConfig::default(),
            scene: SceneConfig::default(),
            observation: ObservationConfig::default(),
            bandwidth: BandwidthConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn field(path: &str, message: impl Into<String>) -> AppError {
    AppError::Config {
        path: path.to_string(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, AppError> {
        let config: Self = toml::from_str(text).map_err(|e| field("", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::Config {
            path: path.display().to_string(),
            message: format!("cannot read config: {e}"),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            AppError::Config { path: p, message } if p.is_empty() => AppError::Config {
                path: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Check every field, reporting the first violation with its path.
    pub fn validate(&self) -> Result<(), AppError> {
        if self.channels == 0 {
            return Err(field("channels", "must be at least 1"));
        }
        if self.compression_ratio == 0 || !self.channels.is_multiple_of(self.compression_ratio) {
            return Err(field(
                "compression_ratio",
                format!("must be positive and divide channels ({})", self.channels),
            ));
        }
        if self.channels / self.compression_ratio > u16::MAX as usize {
            return Err(field("compression_ratio", "channels / compression_ratio must fit in 16 bits"));
        }
        if self.ratios.is_empty() {
            return Err(field("ratios", "list at least one selection ratio"));
        }
        for (i, &r) in self.ratios.iter().enumerate() {
            if !(r > 0.0 && r <= 1.0) {
                return Err(field(&format!("ratios[{i}]"), format!("{r} is outside (0, 1]")));
            }
        }
        if self.strategies.is_empty() {
            return Err(field("strategies", "list at least one of pred_fg, gt_fg, gt_bg"));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "list at least one seed"));
        }
        if self.epochs == 0 {
            return Err(field("epochs", "must be at least 1"));
        }
        if self.curriculum_epochs == 0 {
            return Err(field("curriculum_epochs", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.act_threshold) {
            return Err(field("act_threshold", "must lie in [0, 1]"));
        }
        if self.deform_points == 0 {
            return Err(field("deform_points", "must be at least 1"));
        }
        if !(self.ln_eps > 0.0 && self.ln_eps.is_finite()) {
            return Err(field("ln_eps", "must be a positive finite number"));
        }

        let g = &self.grid;
        match g.preset {
            GridPreset::Custom => {
                for (name, v) in [("grid.height", g.height), ("grid.width", g.width)] {
                    match v {
                        None => return Err(field(name, "required when grid.preset = \"custom\"")),
                        Some(0) => return Err(field(name, "must be at least 1")),
                        Some(v) if v > u16::MAX as usize => {
                            return Err(field(name, "must fit in 16 bits"))
                        }
                        _ => {}
                    }
                }
            }
            _ => {
                if g.height.is_some() || g.width.is_some() {
                    return Err(field("grid.preset", "height and width may only be set with preset = \"custom\""));
                }
            }
        }
        if !(g.meters_per_cell > 0.0) {
            return Err(field("grid.meters_per_cell", "must be positive"));
        }

        let c = &self.curriculum;
        if !(0.0..1.0).contains(&c.r0) {
            return Err(field("curriculum.r0", "must lie in [0, 1)"));
        }
        if !(c.gamma > 0.0 && c.gamma <= 1.0) {
            return Err(field("curriculum.gamma", "must lie in (0, 1]"));
        }
        if c.period == 0 {
            return Err(field("curriculum.period", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&c.tau) {
            return Err(field("curriculum.tau", "must lie in [0, 1)"));
        }

        let s = &self.scene;
        if !(1..=MAX_AGENTS).contains(&s.agents) {
            return Err(field("scene.agents", format!("must lie in 1..={MAX_AGENTS}")));
        }
        if s.min_objects > s.max_objects {
            return Err(field("scene.min_objects", "must not exceed scene.max_objects"));
        }
        if s.min_object_size == 0 || s.min_object_size > s.max_object_size {
            return Err(field("scene.min_object_size", "must be positive and at most scene.max_object_size"));
        }
        if s.min_occluder_size == 0 || s.min_occluder_size > s.max_occluder_size {
            return Err(field("scene.min_occluder_size", "must be positive and at most scene.max_occluder_size"));
        }
        let (h, w) = g.dims();
        if s.max_object_size > h.min(w) {
            return Err(field("scene.max_object_size", format!("exceeds the {w} x {h} grid")));
        }
        if s.max_occluder_size > h.min(w) {
            return Err(field("scene.max_occluder_size", format!("exceeds the {w} x {h} grid")));
        }

        let o = &self.observation;
        if o.n_rays == 0 {
            return Err(field("observation.n_rays", "must be at least 1"));
        }
        if !(o.max_range > 0.0) {
            return Err(field("observation.max_range", "must be positive"));
        }
        if !(o.sigma >= 0.0) {
            return Err(field("observation.sigma", "must be nonnegative"));
        }
        if !(o.conf_gain > 0.0) {
            return Err(field("observation.conf_gain", "must be positive"));
        }

        let b = &self.bandwidth;
        if !(b.rate_hz > 0.0) {
            return Err(field("bandwidth.rate_hz", "must be positive"));
        }
        if !(b.limit_mbps > 0.0) {
            return Err(field("bandwidth.limit_mbps", "must be positive"));
        }
        let out = &self.output;
        for (name, v) in [
            ("output.sweep_csv", &out.sweep_csv),
            ("output.curriculum_csv", &out.curriculum_csv),
            ("output.bandwidth_csv", &out.bandwidth_csv),
            ("output.images_dir", &out.images_dir),
        ] {
            if v.is_empty() {
                return Err(field(name, "must not be empty"));
            }
        }
        if out.image_scale == 0 {
            return Err(field("output.image_scale", "must be at least 1"));
        }
        Ok(())
    }

    pub fn scene_params(&self) -> SceneParams {
        let (height, width) = self.grid.dims();
        let s = &self.scene;
        SceneParams {
            height,
            width,
            meters_per_cell: self.grid.meters_per_cell,
            min_objects: s.min_objects,
            max_objects: s.max_objects,
            min_object_size: s.min_object_size,
            max_object_size: s.max_object_size,
            occluders: s.occluders,
            min_occluder_size: s.min_occluder_size,
            max_occluder_size: s.max_occluder_size,
            agents: s.agents,
        }
    }

    pub fn curriculum_state(&self) -> CurriculumState {
        let c = &self.curriculum;
        CurriculumState::new(c.r0, c.gamma, c.period, c.tau, c.cutoff).expect("validated")
    }

    pub fn pipeline(&self, strategy: SharingStrategy, ratio: f64) -> PipelineConfig {
        let o = &self.observation;
        PipelineConfig {
            observation: ObservationParams {
                channels: self.channels,
                n_rays: o.n_rays,
                max_range: o.max_range,
                sigma: o.sigma,
                conf_gain: o.conf_gain,
            },
            compression_ratio: self.compression_ratio,
            selection: Selection::TopK { ratio },
            strategy,
            mode: self.mode,
            deform_points: self.deform_points,
            ln_eps: self.ln_eps,
            param_seed: self.param_seed,
            params: self.params,
            budget_bits: self.budget_bits,
            act_threshold: self.act_threshold,
            mining: self.mining,
            cbp_uses_refined: self.cbp_uses_refined,
        }
    }
}
