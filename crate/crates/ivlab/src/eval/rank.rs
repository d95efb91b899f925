//! Log-likelihood scoring and rank classification.

use crate::error::{IvLabError, Result};
use crate::model::{InterventionSpec, Model};
use crate::tasks::{render_knowledge, render_zero_shot, ExampleQuad, World};

/// log P(y | x): likelihood of the fact continuation with no instruction.
pub fn knowledge_prob(model: &Model, world: &World, quad: &ExampleQuad) -> Result<f64> {
    model.completion_logprob(&render_knowledge(world, quad), &quad.y, None)
}

/// log P(y^c | c, x): likelihood of the instructed answer, optionally under
/// an intervention.
pub fn instruction_prob(
    model: &Model,
    world: &World,
    quad: &ExampleQuad,
    intervention: Option<&InterventionSpec>,
) -> Result<f64> {
    model.completion_logprob(&render_zero_shot(world, quad), &quad.yc, intervention)
}

/// Pick the candidate with the highest summed completion log-likelihood.
/// Ties break toward the lowest candidate index. Returns the winning index
/// and every candidate's log-likelihood.
pub fn rank_classify(
    model: &Model,
    prompt: &[usize],
    candidates: &[Vec<usize>],
    intervention: Option<&InterventionSpec>,
) -> Result<(usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(IvLabError::InvalidArgument("no candidates".into()));
    }
    // All-single-token candidate sets score from one forward pass; causal
    // masking makes the last-position logits identical to the ones the
    // per-candidate path sees.
    let lls: Vec<f64> = if candidates.iter().all(|c| c.len() == 1) {
        if prompt.is_empty() {
            return Err(IvLabError::InvalidArgument("empty prompt".into()));
        }
        let fwd = model.forward(
            prompt,
            false,
            intervention.map(|iv| (iv, prompt.len() - 1)),
        )?;
        let lsm = crate::numerics::stable_log_softmax(fwd.logits.row(prompt.len() - 1));
        candidates.iter().map(|c| lsm[c[0]]).collect()
    } else {
        let mut lls = Vec::with_capacity(candidates.len());
        for cand in candidates {
            lls.push(model.completion_logprob(prompt, cand, intervention)?);
        }
        lls
    };
    let mut best = 0;
    for (i, &v) in lls.iter().enumerate() {
        if v > lls[best] {
            best = i;
        }
    }
    Ok((best, lls))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tasks::{build_world, make_examples, Split, TaskFamily, TaskSpec, WorldSizes};

    fn tiny_model(vocab: usize) -> Model {
        Model::new(ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_head: 8,
            d_mlp: 32,
            vocab_size: vocab,
            max_context: 64,
            seed: 3,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn probabilities_are_log_scale() {
        let w = build_world(1, &WorldSizes::default()).unwrap();
        let m = tiny_model(w.layout.vocab_size);
        let t = TaskSpec {
            id: "k".into(),
            family: TaskFamily::PairMap,
            instruction: vec![w.layout.fresh_instr.start],
            relation: 0,
            seed: 0,
        };
        let q = &make_examples(&w, &t, 1, Split::Test).unwrap()[0];
        assert!(knowledge_prob(&m, &w, q).unwrap() <= 0.0);
        assert!(instruction_prob(&m, &w, q, None).unwrap() <= 0.0);
    }

    #[test]
    fn single_candidate_always_wins_and_empty_errors() {
        let m = tiny_model(32);
        let (best, lls) = rank_classify(&m, &[1, 2, 3], &[vec![4]], None).unwrap();
        assert_eq!(best, 0);
        assert_eq!(lls.len(), 1);
        assert!(rank_classify(&m, &[1], &[], None).is_err());
    }

    #[test]
    fn fast_path_matches_per_candidate_scoring() {
        let m = tiny_model(32);
        let prompt = [1usize, 7, 2];
        let cands = vec![vec![3], vec![9], vec![14]];
        let (_, fast) = rank_classify(&m, &prompt, &cands, None).unwrap();
        for (c, ll) in cands.iter().zip(&fast) {
            let slow = m.completion_logprob(&prompt, c, None).unwrap();
            assert_eq!(*ll, slow);
        }
    }

    #[test]
    fn ties_break_to_lowest_index() {
        let m = tiny_model(32);
        // identical candidates tie exactly
        let (best, lls) = rank_classify(&m, &[1, 2], &[vec![5], vec![5], vec![6]], None).unwrap();
        assert_eq!(lls[0], lls[1]);
        assert!(best == 0 || lls[2] > lls[0]);
    }
}
