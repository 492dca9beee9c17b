//! One communication round: every agent observes, selects, encodes and
//! broadcasts; every receiver admits, decodes and fuses.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cbp::{compose_shared, mine_bg, CurriculumState, MiningOptions};
use crate::codec::{
    compress_cells, decode_message, decompress_scatter, BudgetLedger, CompressionPair,
    Rejection, SparseMessage,
};
use crate::error::{Error, Result};
use crate::faf::{fuse, FusionOutput, FusionParams, DEFAULT_LN_EPS};
use crate::fca::{deformable_enrich, refine_confidence, ConfidenceGrid, DeformAttnParams, Selection, DEFAULT_POINTS};
use crate::sim::metrics::{score_fused, Metrics};
use crate::sim::observe::{observe, AgentObservation, ObservationParams};
use crate::sim::scene::SceneSpec;
use crate::sim::strategy::{strategy_mask, SharingStrategy};
use crate::tensor::{CellMask, FeatureGrid};

/// Whether background mining runs (training) or only foreground is sent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    #[default]
    Infer,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Mode::Train),
            "infer" => Ok(Mode::Infer),
            _ => Err(Error::param(format!("unknown mode {s:?} (expected train or infer)"))),
        }
    }
}

/// Source of the attention and fusion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// SplitMix64-seeded weights.
    #[default]
    Seeded,
    /// Identity deformable attention and the nonnegative-gating fusion
    /// configuration.
    NonnegGating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub observation: ObservationParams,
    pub compression_ratio: usize,
    pub selection: Selection,
    pub strategy: SharingStrategy,
    pub mode: Mode,
    pub deform_points: usize,
    pub ln_eps: f64,
    pub param_seed: u64,
    pub params: ParamKind,
    pub budget_bits: u64,
    pub act_threshold: f64,
    pub mining: MiningOptions,
    /// Feed the density-refined confidence (rather than the raw one) to
    /// background mining.
    pub cbp_uses_refined: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            observation: ObservationParams::default(),
            compression_ratio: 16,
            selection: Selection::TopK { ratio: 0.01 },
            strategy: SharingStrategy::PredFg,
            mode: Mode::Infer,
            deform_points: DEFAULT_POINTS,
            ln_eps: DEFAULT_LN_EPS,
            param_seed: 0,
            params: ParamKind::Seeded,
            // 28 Mbit/s at 10 rounds per second.
            budget_bits: 2_800_000,
            act_threshold: 0.5,
            mining: MiningOptions::default(),
            cbp_uses_refined: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.observation.validate()?;
        let c = self.observation.channels;
        if self.compression_ratio == 0 || !c.is_multiple_of(self.compression_ratio) {
            return Err(Error::param(format!(
                "channels {c} not divisible by compression ratio {}",
                self.compression_ratio
            )));
        }
        if c / self.compression_ratio > u16::MAX as usize {
            return Err(Error::param("compressed channel count must fit in 16 bits"));
        }
        match self.selection {
            Selection::TopK { ratio } if !(ratio > 0.0 && ratio <= 1.0) => {
                return Err(Error::param(format!("selection ratio {ratio} outside (0, 1]")));
            }
            Selection::Threshold { threshold } if !(0.0..=1.0).contains(&threshold) => {
                return Err(Error::param(format!("threshold {threshold} outside [0, 1]")));
            }
            _ => {}
        }
        if self.deform_points == 0 {
            return Err(Error::param("deform_points must be positive"));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::param("ln_eps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.act_threshold) {
            return Err(Error::param("act_threshold outside [0, 1]"));
        }
        Ok(())
    }

    pub fn compressed_channels(&self) -> usize {
        self.observation.channels / self.compression_ratio
    }
}

/// Everything one agent produced and received in a round.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentRound {
    pub agent: u32,
    pub observation: AgentObservation,
    pub refined_conf: ConfidenceGrid,
    /// Foreground mask chosen by the sharing strategy.
    pub fg_mask: CellMask,
    /// Transmitted mask (foreground plus mined background).
    pub shared_mask: CellMask,
    pub anchors: Vec<usize>,
    pub selected_bg: Vec<usize>,
    pub message: Vec<u8>,
    pub fusion: FusionOutput,
    pub metrics: Metrics,
    /// Score of the ego feature with no collaboration.
    pub baseline: Metrics,
    pub bits_sent: u64,
    pub bits_received: u64,
    pub rejected_msgs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundOutput {
    pub agents: Vec<AgentRound>,
    pub ledger: BudgetLedger,
    pub rejections: Vec<Rejection>,
}

/// Built parameters for repeated rounds.
#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    deform: DeformAttnParams,
    fusion: FusionParams,
    compression: CompressionPair,
}

/// What one agent selects and encodes for broadcast.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentShare {
    pub obs: AgentObservation,
    pub refined: ConfidenceGrid,
    pub fg: CellMask,
    pub shared: CellMask,
    pub anchors: Vec<usize>,
    pub selected: Vec<usize>,
    pub message: Vec<u8>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let c = config.observation.channels;
        let seed = config.param_seed;
        let (deform, mut fusion) = match config.params {
            ParamKind::Seeded => (
                DeformAttnParams::seeded(c, config.deform_points, seed),
                FusionParams::seeded(c, seed.wrapping_add(1)),
            ),
            ParamKind::NonnegGating => (
                DeformAttnParams::identity(c, config.deform_points),
                FusionParams::nonneg_gating(c),
            ),
        };
        fusion.ln_eps = config.ln_eps;
        let compression = CompressionPair::seeded(c, config.compressed_channels(), seed.wrapping_add(2))?;
        Ok(Self {
            config,
            deform,
            fusion,
            compression,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn compression(&self) -> &CompressionPair {
        &self.compression
    }

    pub fn fusion(&self) -> &FusionParams {
        &self.fusion
    }

    pub fn deform(&self) -> &DeformAttnParams {
        &self.deform
    }

    fn fg_mask(&self, obs: &AgentObservation, refined: &ConfidenceGrid) -> Result<CellMask> {
        let cells = obs.gt_fg.cells();
        match (self.config.strategy, self.config.selection) {
            (SharingStrategy::PredFg, sel) => sel.select(refined),
            (kind, Selection::TopK { ratio }) => strategy_mask(kind, obs, ratio),
            (kind, sel) => {
                // Threshold mode: give ground-truth strategies the budget the
                // thresholded prediction would have used.
                let k = sel.select(refined)?.count().max(1);
                strategy_mask(kind, obs, k as f64 / cells as f64)
            }
        }
    }

    /// Observe, select, enrich, mine, compress and encode for one agent.
    pub fn share(&self, scene: &SceneSpec, agent: usize, curriculum: &CurriculumState) -> Result<AgentShare> {
        let cfg = &self.config;
        let obs = observe(scene, agent, &cfg.observation)?;
        let refined = refine_confidence(&obs.conf, &obs.density)?;
        let fg = self.fg_mask(&obs, &refined)?;
        let enriched = deformable_enrich(&obs.features, &fg, &self.deform)?;
        let (shared, anchors, selected) = match cfg.mode {
            Mode::Infer => (fg.clone(), Vec::new(), Vec::new()),
            Mode::Train => {
                let conf = if cfg.cbp_uses_refined { &refined } else { &obs.conf };
                let mined = mine_bg(
                    &obs.features,
                    &obs.density,
                    conf,
                    &fg,
                    curriculum.r_current,
                    curriculum.tau,
                    cfg.mining,
                )?;
                (mined.shared_mask, mined.anchors, mined.selected_bg)
            }
        };
        let cells = compose_shared(&enriched, &shared)?;
        let compressed = compress_cells(&cells, &self.compression)?;
        let message = SparseMessage::from_cells(agent as u32, &compressed)?.encode();
        Ok(AgentShare {
            obs,
            refined,
            fg,
            shared,
            anchors,
            selected,
            message,
        })
    }

    /// Run one round over all agents of `scene`.
    ///
    /// Messages are offered to receivers in ascending receiver order, and
    /// for each receiver in ascending sender order; the ledger admits each
    /// against the receiver's remaining budget.
    pub fn run_round(&self, scene: &SceneSpec, curriculum: &CurriculumState) -> Result<RoundOutput> {
        scene.validate()?;
        let n = scene.agents.len();
        let outgoing: Vec<AgentShare> = (0..n)
            .into_par_iter()
            .map(|i| self.share(scene, i, curriculum))
            .collect::<Result<_>>()?;

        let mut ledger = BudgetLedger::new(self.config.budget_bits);
        let mut rejections = Vec::new();
        let mut inbound: Vec<Vec<(FeatureGrid, CellMask)>> = vec![Vec::new(); n];
        for (r, slot) in inbound.iter_mut().enumerate() {
            for (s, out) in outgoing.iter().enumerate() {
                if s == r {
                    continue;
                }
                let bits = 8 * out.message.len() as u64;
                match ledger.admit(s as u32, r as u32, bits) {
                    Ok(next) => {
                        ledger = next;
                        let msg = decode_message(&out.message)?;
                        slot.push(decompress_scatter(&msg, &self.compression)?);
                    }
                    Err(rej) => rejections.push(rej),
                }
            }
        }

        let threshold = self.config.act_threshold;
        let agents = outgoing
            .into_par_iter()
            .zip(inbound)
            .enumerate()
            .map(|(i, (out, neighbors))| {
                let fusion = fuse(&out.obs.features, &neighbors, &self.fusion)?;
                let metrics = score_fused(&fusion.fused, &out.obs.gt_fg, threshold)?;
                let baseline = score_fused(&out.obs.features, &out.obs.gt_fg, threshold)?;
                Ok(AgentRound {
                    agent: i as u32,
                    refined_conf: out.refined,
                    fg_mask: out.fg,
                    shared_mask: out.shared,
                    anchors: out.anchors,
                    selected_bg: out.selected,
                    message: out.message,
                    fusion,
                    metrics,
                    baseline,
                    bits_sent: ledger.outbound(i as u32),
                    bits_received: ledger.inbound(i as u32),
                    rejected_msgs: rejections.iter().filter(|r| r.receiver == i as u32).count(),
                    observation: out.obs,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(RoundOutput {
            agents,
            ledger,
            rejections,
        })
    }
}

/// Convenience wrapper building a [`Pipeline`] for a single round.
pub fn run_round(scene: &SceneSpec, config: &PipelineConfig, curriculum: &CurriculumState) -> Result<RoundOutput> {
    Pipeline::new(config.clone())?.run_round(scene, curriculum)
}
