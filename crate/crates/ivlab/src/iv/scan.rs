//! Causal-effect scanning (Eq. 2): for every head, the change in the
//! correct-answer probability when that head's activation on a
//! label-shuffled counterfactual prompt is replaced by its clean
//! task-conditioned mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::iv::types::{CEMap, TaskConditionedActivations};
use crate::model::{all_heads, HeadLocation, InterventionSpec, Model, PositionSelector};
use crate::numerics::{stable_softmax, Tensor};
use crate::par::ordered_map;
use crate::tasks::{build_icl_prompt, make_examples, ICLPrompt, Split, TaskSpec, World};

const DEMO_POOL_N: usize = 40;

/// How P(y | ...) is normalized when scoring a scan input.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeProbMode {
    /// Full-vocabulary softmax probability of the first answer token.
    #[default]
    FullVocab,
    /// Softmax over the candidate answers' first tokens only.
    CandidateNormalized,
}

/// Probability of the correct answer from one forward's logits.
fn answer_prob(
    logits: &Tensor,
    prompt: &ICLPrompt,
    candidates: &[Vec<usize>],
    mode: CeProbMode,
) -> f64 {
    let row = logits.row(prompt.last_prompt_token);
    let answer = prompt.answer[0];
    match mode {
        CeProbMode::FullVocab => stable_softmax(row)[answer],
        CeProbMode::CandidateNormalized => {
            let cand_logits: Vec<f64> = candidates.iter().map(|c| row[c[0]]).collect();
            let probs = stable_softmax(&cand_logits);
            let idx = candidates.iter().position(|c| c[0] == answer).unwrap();
            probs[idx]
        }
    }
}

/// The label-shuffled counterfactual inputs a scan runs over.
fn scan_inputs(
    world: &World,
    task: &TaskSpec,
    tca: &TaskConditionedActivations,
    n_counterfactuals: usize,
    seed: u64,
) -> Result<Vec<(ICLPrompt, Vec<Vec<usize>>)>> {
    let queries = make_examples(world, task, n_counterfactuals, Split::Val)?;
    let demo_pool = make_examples(world, task, DEMO_POOL_N, Split::DemoPool)?;
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let p = build_icl_prompt(
                world,
                tca.n_shots,
                q,
                &demo_pool,
                true,
                seed ^ (i as u64).wrapping_mul(0x9e3779b97f4a7c15),
            )?;
            let cands = task.candidates(world, q);
            Ok((p, cands))
        })
        .collect()
}

fn check_fingerprint(model: &Model, tca: &TaskConditionedActivations) -> Result<()> {
    let got = model.fingerprint();
    if tca.fingerprint != got {
        return Err(IvLabError::FingerprintMismatch {
            expected: tca.fingerprint.clone(),
            got,
        });
    }
    Ok(())
}

/// Scan every head; parallel across heads with a fixed-order reduce.
pub fn ce_scan(
    model: &Model,
    world: &World,
    task: &TaskSpec,
    tca: &TaskConditionedActivations,
    n_counterfactuals: usize,
    mode: CeProbMode,
    seed: u64,
) -> Result<CEMap> {
    check_fingerprint(model, tca)?;
    let inputs = scan_inputs(world, task, tca, n_counterfactuals, seed)?;

    // Clean probabilities, one per counterfactual input.
    let clean: Vec<Result<f64>> = ordered_map(&inputs, |(p, cands)| {
        let fwd = model.forward(&p.tokens, false, None)?;
        Ok(answer_prob(&fwd.logits, p, cands, mode))
    });
    let clean: Vec<f64> = clean.into_iter().collect::<Result<_>>()?;

    let heads = all_heads(&model.config);
    let per_head: Vec<Result<(HeadLocation, f64)>> = ordered_map(&heads, |&loc| {
        let (mean, _) = tca
            .means
            .get(&loc)
            .ok_or_else(|| IvLabError::InvalidArgument(format!("no mean stored for {loc:?}")))?;
        let vector = Tensor::from_vec(&[mean.len()], mean.clone())?;
        let mut total = 0.0;
        for ((p, cands), &p_clean) in inputs.iter().zip(&clean) {
            let spec = InterventionSpec::head_replace(
                loc,
                vector.clone(),
                PositionSelector::LastPromptToken,
            );
            let fwd = model.forward(&p.tokens, false, Some((&spec, p.last_prompt_token)))?;
            total += answer_prob(&fwd.logits, p, cands, mode) - p_clean;
        }
        Ok((loc, total / inputs.len() as f64))
    });

    let mut ce = BTreeMap::new();
    for r in per_head {
        let (loc, v) = r?;
        ce.insert(loc, v);
    }
    Ok(CEMap {
        task_id: task.id.clone(),
        fingerprint: tca.fingerprint.clone(),
        ce,
        n_inputs: inputs.len(),
    })
}

/// Mandated oracle: one full forward per (head, input) pair, including a
/// fresh clean forward, strictly sequentially. `ce_scan` must match this
/// bit-for-bit.
pub fn ce_scan_bruteforce(
    model: &Model,
    world: &World,
    task: &TaskSpec,
    tca: &TaskConditionedActivations,
    n_counterfactuals: usize,
    mode: CeProbMode,
    seed: u64,
) -> Result<CEMap> {
    check_fingerprint(model, tca)?;
    let inputs = scan_inputs(world, task, tca, n_counterfactuals, seed)?;
    let mut ce = BTreeMap::new();
    for loc in all_heads(&model.config) {
        let (mean, _) = tca
            .means
            .get(&loc)
            .ok_or_else(|| IvLabError::InvalidArgument(format!("no mean stored for {loc:?}")))?;
        let vector = Tensor::from_vec(&[mean.len()], mean.clone())?;
        let mut total = 0.0;
        for (p, cands) in &inputs {
            let clean = model.forward(&p.tokens, false, None)?;
            let p_clean = answer_prob(&clean.logits, p, cands, mode);
            let spec = InterventionSpec::head_replace(
                loc,
                vector.clone(),
                PositionSelector::LastPromptToken,
            );
            let fwd = model.forward(&p.tokens, false, Some((&spec, p.last_prompt_token)))?;
            total += answer_prob(&fwd.logits, p, cands, mode) - p_clean;
        }
        ce.insert(loc, total / inputs.len() as f64);
    }
    Ok(CEMap {
        task_id: task.id.clone(),
        fingerprint: tca.fingerprint.clone(),
        ce,
        n_inputs: inputs.len(),
    })
}
