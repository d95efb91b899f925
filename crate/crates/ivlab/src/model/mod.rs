//! Toy decoder-only transformer with per-head activation taps, residual
//! stream interventions, LoRA adapter stacking, and a versioned checkpoint
//! container.

pub mod checkpoint;
pub mod config;
pub mod intervention;
pub mod transformer;

pub use checkpoint::RngState;
pub use config::{all_heads, HeadLocation, ModelConfig, PositionalScheme};
pub use intervention::{
    ActivationRecord, Edit, InterventionSpec, PositionSelector, ResolvedIntervention,
};
pub use transformer::{AdapterMeta, ForwardOutput, Model, ParamNodes};

#[cfg(test)]
mod tests;
