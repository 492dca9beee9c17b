//! Configuration-driven experiment runner for the sparse feature-sharing
//! engine: ratio sweeps, curriculum traces, bandwidth tables and heatmaps.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod ops;
pub mod output;

pub use config::{ExperimentConfig, GridPreset};
pub use error::{AppError, Result};
pub use ops::{
    bandwidth_rows, bandwidth_table, curriculum_rows, load_scene, render_round, replay_curriculum,
    run_render, run_sweep, sweep_rows, BandwidthRow, CurriculumRow, MetricRow,
};
pub use output::{export_heatmaps, write_atomic, GrayImage};
