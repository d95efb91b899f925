//! Task-conditioned activation averaging (Eq. 1): mean per-head residual
//! contributions at the last prompt token of clean N-shot ICL inputs.

use std::collections::BTreeMap;

use crate::error::{IvLabError, Result};
use crate::eval::rank_classify;
use crate::model::{HeadLocation, Model};
use crate::par::ordered_map_range;
use crate::tasks::{build_icl_prompt, make_examples, Split, TaskSpec, World};

/// Demonstrations available per extraction prompt.
const DEMO_POOL_N: usize = 40;

use crate::iv::types::TaskConditionedActivations;

/// Collect mean head activations over `n_samples` clean ICL inputs drawn
/// from the task's validation split. With `filter_correct`, only inputs the
/// model rank-classifies correctly contribute (the paper's Appendix-D
/// filter); zero survivors is a gate failure.
pub fn collect_activations(
    model: &Model,
    world: &World,
    task: &TaskSpec,
    n_shots: usize,
    n_samples: usize,
    filter_correct: bool,
    seed: u64,
) -> Result<TaskConditionedActivations> {
    if n_samples == 0 {
        return Err(IvLabError::InvalidArgument("n_samples must be >= 1".into()));
    }
    let queries = make_examples(world, task, n_samples, Split::Val)?;
    let demo_pool = make_examples(world, task, DEMO_POOL_N, Split::DemoPool)?;

    // One record per sample: None when the correctness filter rejects it.
    let per_sample: Vec<Result<Option<BTreeMap<HeadLocation, Vec<f64>>>>> =
        ordered_map_range(queries.len(), |i| {
            let q = &queries[i];
            let prompt = build_icl_prompt(
                world,
                n_shots,
                q,
                &demo_pool,
                false,
                seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15),
            )?;
            if filter_correct {
                let candidates = task.candidates(world, q);
                let truth = candidates
                    .iter()
                    .position(|c| *c == q.yc)
                    .expect("candidate set contains the true answer");
                let (pred, _) = rank_classify(model, &prompt.tokens, &candidates, None)?;
                if pred != truth {
                    return Ok(None);
                }
            }
            let fwd = model.forward(&prompt.tokens, true, None)?;
            let rec = fwd.record.expect("recording was requested");
            let mut per_head = BTreeMap::new();
            for (&(loc, pos), v) in rec.iter() {
                if pos == prompt.last_prompt_token {
                    per_head.insert(loc, v.clone());
                }
            }
            Ok(Some(per_head))
        });

    let mut sums: BTreeMap<HeadLocation, Vec<f64>> = BTreeMap::new();
    let mut kept = 0usize;
    for r in per_sample {
        let Some(per_head) = r? else { continue };
        kept += 1;
        for (loc, v) in per_head {
            let s = sums.entry(loc).or_insert_with(|| vec![0.0; v.len()]);
            for (a, b) in s.iter_mut().zip(&v) {
                *a += b;
            }
        }
    }
    if kept == 0 {
        return Err(IvLabError::GateFailure {
            task: task.id.clone(),
            detail: format!("0 of {n_samples} ICL inputs answered correctly"),
        });
    }
    let means = sums
        .into_iter()
        .map(|(loc, mut v)| {
            for x in v.iter_mut() {
                *x /= kept as f64;
            }
            (loc, (v, kept))
        })
        .collect();
    Ok(TaskConditionedActivations {
        task_id: task.id.clone(),
        fingerprint: model.fingerprint(),
        means,
        n_shots,
        kept,
        total: n_samples,
    })
}
