//! Experiment operations behind the subcommands.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sparsecomm_core::cbp::CurriculumState;
use sparsecomm_core::codec::SizeModel;
use sparsecomm_core::sim::{generate_scene, Mode, Pipeline, RoundOutput, SceneSpec};
use sparsecomm_core::tensor::ratio_count;

use crate::config::ExperimentConfig;
use crate::error::{AppError, Result};
use crate::output::{export_heatmaps, write_atomic, write_csv};

/// One sweep row. Column order is part of the output format.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub seed: u64,
    pub epoch: u32,
    pub agent: u32,
    pub strategy: String,
    pub ratio: f64,
    pub recall: f64,
    pub precision: f64,
    pub iou: f64,
    pub mean_fg_act: f64,
    pub mean_bg_act: f64,
    pub bits_sent: u64,
    pub bits_received: u64,
    pub rejected_msgs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurriculumRow {
    pub epoch: u32,
    pub agent: u32,
    pub r_current: f64,
    pub fg_cells: usize,
    pub anchor_cells: usize,
    pub mined_cells: usize,
    pub shared_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandwidthRow {
    pub ratio: f64,
    pub model: String,
    pub cells: u64,
    pub bits_per_message: u64,
    pub bytes_per_message: u64,
    pub bits_per_round: u64,
    pub mbps: f64,
    pub within_limit: bool,
    /// Whether dense_fp32 > sparse_fp32 > sparse_fp16 holds at this ratio.
    pub ordering_holds: bool,
}

fn curriculum_for(config: &ExperimentConfig, epoch: u32) -> CurriculumState {
    match config.mode {
        Mode::Train => config.curriculum_state().at_epoch(epoch),
        Mode::Infer => CurriculumState::inference(),
    }
}

fn pipelines(config: &ExperimentConfig) -> Result<Vec<(usize, usize, Pipeline)>> {
    let mut out = Vec::new();
    for (si, &strategy) in config.strategies.iter().enumerate() {
        for (ri, &ratio) in config.ratios.iter().enumerate() {
            out.push((si, ri, Pipeline::new(config.pipeline(strategy, ratio))?));
        }
    }
    Ok(out)
}

/// Rows for every seed x epoch x agent x strategy x ratio, ordered by that
/// tuple (strategies and ratios in config order).
pub fn sweep_rows(config: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    config.validate()?;
    let pipelines = pipelines(config)?;
    let params = config.scene_params();
    let per_seed: Vec<Vec<MetricRow>> = config
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<MetricRow>> {
            let scene = generate_scene(&params, seed)?;
            let mut keyed = Vec::new();
            for epoch in 0..config.epochs {
                let cur = curriculum_for(config, epoch);
                for (si, ri, p) in &pipelines {
                    let round = p.run_round(&scene, &cur)?;
                    for a in round.agents {
                        let row = MetricRow {
                            seed,
                            epoch,
                            agent: a.agent,
                            strategy: config.strategies[*si].to_string(),
                            ratio: config.ratios[*ri],
                            recall: a.metrics.recall,
                            precision: a.metrics.precision,
                            iou: a.metrics.iou,
                            mean_fg_act: a.metrics.mean_fg_activation,
                            mean_bg_act: a.metrics.mean_bg_activation,
                            bits_sent: a.bits_sent,
                            bits_received: a.bits_received,
                            rejected_msgs: a.rejected_msgs,
                        };
                        keyed.push(((epoch, a.agent, *si, *ri), row));
                    }
                }
            }
            keyed.sort_by_key(|(k, _)| *k);
            Ok(keyed.into_iter().map(|(_, r)| r).collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

pub fn run_sweep(config: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let rows = sweep_rows(config)?;
    let path = out_dir.join(&config.output.sweep_csv);
    write_csv(&path, &rows)?;
    Ok(path)
}

/// Trace the background schedule for `curriculum_epochs` epochs on the
/// first seed, strategy and ratio, always in training mode.
pub fn curriculum_rows(config: &ExperimentConfig) -> Result<Vec<CurriculumRow>> {
    config.validate()?;
    let mut cfg = config.pipeline(config.strategies[0], config.ratios[0]);
    cfg.mode = Mode::Train;
    let pipeline = Pipeline::new(cfg)?;
    let scene = generate_scene(&config.scene_params(), config.seeds[0])?;
    let base = config.curriculum_state();
    let per_epoch: Vec<Vec<CurriculumRow>> = (0..config.curriculum_epochs)
        .into_par_iter()
        .map(|epoch| -> Result<Vec<CurriculumRow>> {
            let cur = base.at_epoch(epoch);
            (0..scene.agents.len())
                .map(|agent| {
                    let s = pipeline.share(&scene, agent, &cur)?;
                    Ok(CurriculumRow {
                        epoch,
                        agent: agent as u32,
                        r_current: cur.r_current,
                        fg_cells: s.fg.count(),
                        anchor_cells: s.anchors.len(),
                        mined_cells: s.selected.len(),
                        shared_cells: s.shared.count(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_epoch.into_iter().flatten().collect())
}

pub fn replay_curriculum(config: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let rows = curriculum_rows(config)?;
    let path = out_dir.join(&config.output.curriculum_csv);
    write_csv(&path, &rows)?;
    Ok(path)
}

/// Size-model comparison at every configured ratio on the configured grid.
pub fn bandwidth_rows(config: &ExperimentConfig) -> Result<Vec<BandwidthRow>> {
    config.validate()?;
    let (h, w) = config.grid.dims();
    let cells = (h * w) as u64;
    let c = config.channels as u64;
    let cp = (config.channels / config.compression_ratio) as u64;
    let models = [SizeModel::dense_fp32(c), SizeModel::sparse_fp32(c), SizeModel::sparse_fp16(cp)];
    let b = &config.bandwidth;
    let mut rows = Vec::new();
    for &ratio in &config.ratios {
        let k = ratio_count(ratio, h * w) as u64;
        let bits: Vec<u64> = models.iter().map(|m| m.bits(k, cells)).collect();
        let ordering = bits[0] > bits[1] && bits[1] > bits[2];
        for (m, &bits) in models.iter().zip(&bits) {
            let per_round = bits * b.neighbors;
            let mbps = per_round as f64 * b.rate_hz / 1e6;
            rows.push(BandwidthRow {
                ratio,
                model: m.name.to_string(),
                cells: if m.dense { cells } else { k },
                bits_per_message: bits,
                bytes_per_message: bits / 8,
                bits_per_round: per_round,
                mbps,
                within_limit: mbps < b.limit_mbps,
                ordering_holds: ordering,
            });
        }
    }
    Ok(rows)
}

pub fn bandwidth_table(config: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let rows = bandwidth_rows(config)?;
    let path = out_dir.join(&config.output.bandwidth_csv);
    write_csv(&path, &rows)?;
    Ok(path)
}

/// One round at epoch 0 with the first strategy and ratio.
pub fn render_round(
    config: &ExperimentConfig,
    seed: u64,
    scene: Option<SceneSpec>,
) -> Result<(SceneSpec, RoundOutput)> {
    config.validate()?;
    let scene = match scene {
        Some(s) => s,
        None => generate_scene(&config.scene_params(), seed)?,
    };
    let cfg = config.pipeline(config.strategies[0], config.ratios[0]);
    let round = Pipeline::new(cfg)?.run_round(&scene, &curriculum_for(config, 0))?;
    Ok((scene, round))
}

/// Render a round into `out_dir`: heatmaps under the images directory,
/// `scene.toml`, and one encoded message per agent.
pub fn run_render(
    config: &ExperimentConfig,
    out_dir: &Path,
    seed: u64,
    scene: Option<SceneSpec>,
) -> Result<Vec<PathBuf>> {
    let (scene, round) = render_round(config, seed, scene)?;
    let mut written = export_heatmaps(&round, &out_dir.join(&config.output.images_dir), config.output.image_scale)?;
    let scene_path = out_dir.join("scene.toml");
    let text = toml::to_string(&scene).map_err(|e| {
        AppError::Core(sparsecomm_core::Error::InvalidParameter(format!("scene is not representable in TOML: {e}")))
    })?;
    write_atomic(&scene_path, text.as_bytes())?;
    written.push(scene_path);
    for a in &round.agents {
        let p = out_dir.join(format!("message_agent{}.bin", a.agent));
        write_atomic(&p, &a.message)?;
        written.push(p);
    }
    Ok(written)
}

pub fn load_scene(path: &Path) -> Result<SceneSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
    let scene: SceneSpec = toml::from_str(&text).map_err(|e| AppError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    scene.validate().map_err(|e| AppError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(scene)
}
