//! Artifacts of the instruction-vector pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::model::HeadLocation;

/// Per-head mean activations over clean N-shot ICL inputs (Eq. 1 of the
/// pipeline): the task-conditioned activation h̄^c_{lj} at the last prompt
/// token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskConditionedActivations {
    pub task_id: String,
    pub fingerprint: String,
    /// head -> (mean contribution of length d_model, sample count).
    pub means: BTreeMap<HeadLocation, (Vec<f64>, usize)>,
    pub n_shots: usize,
    /// Samples kept by the correctness filter / total drawn.
    pub kept: usize,
    pub total: usize,
}

/// Mean causal effect per head (Eq. 2), in probability units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CEMap {
    pub task_id: String,
    pub fingerprint: String,
    pub ce: BTreeMap<HeadLocation, f64>,
    pub n_inputs: usize,
}

impl CEMap {
    /// CSV export: layer, head, mean_ce, n.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = String::from("layer,head,mean_ce,n\n");
        for (loc, ce) in &self.ce {
            out.push_str(&format!("{},{},{ce},{}\n", loc.layer, loc.head, self.n_inputs));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// The causal head set S: top-k heads by mean CE across tasks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CausalHeadSet {
    /// Sorted by descending mean CE; ties by (layer, head) ascending.
    pub heads: Vec<HeadLocation>,
    pub k: usize,
    /// Cross-task mean CE for every scanned head.
    pub mean_ce: BTreeMap<HeadLocation, f64>,
}

/// θ_c plus the constituents it was summed from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstructionVector {
    pub task_id: String,
    pub theta: Vec<f64>,
    pub constituents: BTreeMap<HeadLocation, Vec<f64>>,
    pub fingerprint: String,
    pub n_shots: usize,
}

impl InstructionVector {
    /// Recompute θ_c from the stored constituents, in head order. Must match
    /// `theta` bit-for-bit.
    pub fn recompute_theta(&self) -> Vec<f64> {
        let d = self.theta.len();
        let mut sum = vec![0.0; d];
        for v in self.constituents.values() {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
        }
        sum
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let iv: InstructionVector = serde_json::from_slice(&std::fs::read(path)?)?;
        if iv.recompute_theta() != iv.theta {
            return Err(IvLabError::Checkpoint(
                "instruction vector theta does not match its constituents".into(),
            ));
        }
        Ok(iv)
    }
}
