//! Synthetic multi-agent BEV world: scenes, observations, sharing
//! strategies, metrics and the communication round.

pub mod metrics;
pub mod observe;
pub mod round;
pub mod scene;
pub mod strategy;

pub use metrics::{score_fused, Metrics};
pub use observe::{object_signature, observe, AgentObservation, ObservationParams};
pub use round::{run_round, AgentRound, AgentShare, Mode, ParamKind, Pipeline, PipelineConfig, RoundOutput};
pub use scene::{generate_scene, occlusion_scene, Occupant, Pose, Rect, SceneParams, SceneSpec, MAX_AGENTS};
pub use strategy::{strategy_mask, SharingStrategy};
