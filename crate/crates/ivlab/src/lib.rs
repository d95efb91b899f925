//! A desk-scale laboratory for studying instruction-following capabilities
//! of a self-trained toy decoder-only transformer: per-head activation
//! extraction, causal-effect head scanning, residual-stream interventions,
//! and intervention-guided continual fine-tuning.

pub mod cli;
pub mod error;
pub mod eval;
pub mod iv;
pub mod model;
pub mod numerics;
pub mod tasks;
pub mod train;
pub mod par;

pub use error::{IvLabError, Result};
