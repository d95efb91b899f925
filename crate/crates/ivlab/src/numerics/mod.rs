//! Dense-tensor arithmetic with reverse-mode differentiation, the Adam
//! optimizer, and a finite-difference gradient oracle.

pub mod adam;
pub mod graph;
pub mod gradcheck;
pub mod params;
pub mod tensor;

pub use adam::AdamState;
pub use gradcheck::{finite_diff_check, GradCheckOptions, GradCheckReport};
pub use graph::{stable_log_softmax, stable_softmax, Graph, NodeId};
pub use params::{Param, ParamId, ParamSet};
pub use tensor::{Precision, Tensor};
