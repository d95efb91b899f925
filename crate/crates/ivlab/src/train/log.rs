//! Continual-run bookkeeping: the accuracy matrices behind HP/IP/OP and the
//! forgetting curves.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};

/// One evaluated set tracked across the sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSetMeta {
    pub id: String,
    /// Never part of the training sequence.
    pub held_out: bool,
    /// Index into the task order when this set's task is trained, if any.
    pub trained_at: Option<usize>,
}

/// Accuracy matrices over checkpoints. Row i = eval set, column j = after
/// task j, with column 0 the pre-fine-tuning model. Values in [0,1].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContinualRunLog {
    pub task_order: Vec<String>,
    pub eval_sets: Vec<EvalSetMeta>,
    /// Zero-shot instruction-form accuracy (the a^i_j matrix).
    pub zero_shot: Vec<Vec<f64>>,
    /// 10-shot instruction-form accuracy (the hat-a^i_j matrix).
    pub icl: Vec<Vec<f64>>,
    /// Knowledge-form accuracy per checkpoint.
    pub knowledge: Vec<Vec<f64>>,
    /// Per-task training loss curves.
    pub loss_curves: Vec<Vec<f64>>,
    pub seed: u64,
    pub config_hash: String,
}

impl ContinualRunLog {
    pub fn n_checkpoints(&self) -> usize {
        self.task_order.len() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.n_checkpoints();
        for m in [&self.zero_shot, &self.icl, &self.knowledge] {
            if m.len() != self.eval_sets.len() {
                return Err(IvLabError::Config(format!(
                    "matrix has {} rows for {} eval sets",
                    m.len(),
                    self.eval_sets.len()
                )));
            }
            for row in m {
                if row.len() != cols {
                    return Err(IvLabError::Config(format!(
                        "matrix row has {} columns, expected {cols}",
                        row.len()
                    )));
                }
                if row.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(IvLabError::Config("accuracy outside [0,1]".into()));
                }
            }
        }
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    /// Flattened CSV: eval_set, after_task, mode, accuracy.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = String::from("eval_set,after_task,mode,accuracy\n");
        for (mode, matrix) in [
            ("zero", &self.zero_shot),
            ("icl", &self.icl),
            ("knowledge", &self.knowledge),
        ] {
            for (i, row) in matrix.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    out.push_str(&format!("{},{j},{mode},{v}\n", self.eval_sets[i].id));
                }
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
