//! The instruction-vector pipeline: task-conditioned activation averaging,
//! causal-effect head scanning, head-set selection, θ_c aggregation, and the
//! intervention operators applied downstream.

pub mod apply;
pub mod collect;
pub mod scan;
pub mod select;
pub mod types;

pub use apply::{apply_iv, iv_intervention, sweep_layers, ApplyMode, LayerSweep};
pub use collect::collect_activations;
pub use scan::{ce_scan, ce_scan_bruteforce, CeProbMode};
pub use select::{extract_iv, select_heads};
pub use types::{CEMap, CausalHeadSet, InstructionVector, TaskConditionedActivations};
