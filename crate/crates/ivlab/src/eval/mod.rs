//! Measurement: knowledge/instruction probabilities, rank classification,
//! set evaluation, and the HP/IP/OP continual-learning metrics.

pub mod metrics;
pub mod rank;
pub mod set;

pub use metrics::{knowledge_vs_instruction_curves, summarize, CurveTable, MetricsSummary};
pub use rank::{instruction_prob, knowledge_prob, rank_classify};
pub use set::{evaluate_set, EvalForm, EvalMode, EvalResult, EvalSpec, ExampleRecord};
