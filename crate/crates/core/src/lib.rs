//! Sparse bird's-eye-view feature sharing for multi-agent collaborative
//! perception.
//!
//! The crate is organized as a pipeline:
//!
//! * [`tensor`]: grids, masks and the small numeric kernels everything else
//!   is built from.
//! * [`fca`]: density-refined confidence, foreground selection and
//!   deformable attention enrichment of foreground cells.
//! * [`cbp`]: informative background mining and the background-ratio
//!   annealing schedule.
//! * [`faf`]: max aggregation of neighbor features and the mask-gated
//!   residual fusion.
//! * [`codec`]: channel compression, binary16 quantization, the wire format,
//!   bit accounting and per-receiver budget admission.
//! * [`sim`]: a synthetic ray-cast BEV world, proxy scoring and the
//!   per-round driver that wires all stages together.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cbp;
pub mod codec;
pub mod error;
pub mod faf;
pub mod fca;
pub mod rng;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
