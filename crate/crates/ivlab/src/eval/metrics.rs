//! HP/IP/OP summary metrics and the knowledge-vs-instruction curve table.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::train::log::ContinualRunLog;

/// Final-column continual-learning metrics, all in [0,1].
/// HP: mean zero-shot accuracy over held-out sets after the last task.
/// IP: the same with 10-shot ICL prompts.
/// OP: mean final accuracy over the trained tasks (absent when T=0).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub hp: f64,
    pub ip: f64,
    pub op: Option<f64>,
    /// Per eval set: column-0 accuracy minus final-column accuracy
    /// (positive = forgetting), zero-shot instruction form.
    pub forgetting: Vec<(String, f64)>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Compute HP/IP/OP and forgetting deltas from a complete run log.
pub fn summarize(log: &ContinualRunLog) -> Result<MetricsSummary> {
    log.validate()?;
    if log.eval_sets.iter().all(|s| !s.held_out) {
        return Err(IvLabError::Config("no held-out eval sets in log".into()));
    }
    let last = log.n_checkpoints() - 1;
    let held = |m: &Vec<Vec<f64>>| {
        mean(
            log.eval_sets
                .iter()
                .zip(m)
                .filter(|(s, _)| s.held_out)
                .map(|(_, row)| row[last]),
        )
        .expect("held-out sets exist")
    };
    let hp = held(&log.zero_shot);
    let ip = held(&log.icl);
    let op = if last == 0 {
        None
    } else {
        mean(
            log.eval_sets
                .iter()
                .zip(&log.zero_shot)
                .filter(|(s, _)| s.trained_at.is_some())
                .map(|(_, row)| row[last]),
        )
    };
    let forgetting = log
        .eval_sets
        .iter()
        .zip(&log.zero_shot)
        .map(|(s, row)| (s.id.clone(), row[0] - row[last]))
        .collect();
    Ok(MetricsSummary {
        hp,
        ip,
        op,
        forgetting,
    })
}

/// Per-stage mean accuracies over the held-out sets, one column per
/// checkpoint: knowledge form, instruction form zero-shot, instruction form
/// 10-shot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub knowledge: Vec<f64>,
    pub instruction_zero: Vec<f64>,
    pub instruction_icl: Vec<f64>,
}

pub fn knowledge_vs_instruction_curves(log: &ContinualRunLog) -> Result<CurveTable> {
    log.validate()?;
    if log.knowledge.is_empty() {
        return Err(IvLabError::Config("knowledge form missing from log".into()));
    }
    let cols = log.n_checkpoints();
    let stage_mean = |m: &Vec<Vec<f64>>, j: usize| {
        mean(
            log.eval_sets
                .iter()
                .zip(m)
                .filter(|(s, _)| s.held_out)
                .map(|(_, row)| row[j]),
        )
        .ok_or_else(|| IvLabError::Config("no held-out eval sets in log".into()))
    };
    let mut table = CurveTable {
        knowledge: Vec::with_capacity(cols),
        instruction_zero: Vec::with_capacity(cols),
        instruction_icl: Vec::with_capacity(cols),
    };
    for j in 0..cols {
        table.knowledge.push(stage_mean(&log.knowledge, j)?);
        table.instruction_zero.push(stage_mean(&log.zero_shot, j)?);
        table.instruction_icl.push(stage_mean(&log.icl, j)?);
    }
    Ok(table)
}

impl CurveTable {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = String::from("stage,knowledge,instruction_zero,instruction_icl\n");
        for j in 0..self.knowledge.len() {
            out.push_str(&format!(
                "{j},{},{},{}\n",
                self.knowledge[j], self.instruction_zero[j], self.instruction_icl[j]
            ));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}
