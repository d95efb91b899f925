//! Intervention operators built from an extracted θ_c, and the layer sweep
//! used to pick an injection site.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::eval::{evaluate_set, EvalForm, EvalMode, EvalSpec};
use crate::iv::types::InstructionVector;
use crate::model::{InterventionSpec, Model, PositionSelector};
use crate::numerics::Tensor;
use crate::tasks::{TaskSpec, World};

/// How θ_c interacts with the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApplyMode {
    /// `h_l += s · θ_c` at the last prompt token.
    Add { scale: f64 },
    /// Zero-replace the contributions of every head in S.
    AblateS,
    /// Add a seeded random vector with ‖v‖ = ‖θ_c‖ (the control condition).
    RandomControl { seed: u64 },
}

/// Build the intervention spec for one application of the IV.
pub fn iv_intervention(
    iv: &InstructionVector,
    layer: usize,
    mode: ApplyMode,
) -> Result<InterventionSpec> {
    let d = iv.theta.len();
    match mode {
        ApplyMode::Add { scale } => {
            if scale < 0.0 {
                return Err(IvLabError::InvalidArgument(
                    "intervention scale must be non-negative".into(),
                ));
            }
            Ok(InterventionSpec::residual_add(
                layer,
                Tensor::from_vec(&[d], iv.theta.clone())?,
                scale,
                PositionSelector::LastPromptToken,
            ))
        }
        ApplyMode::AblateS => {
            let zero = Tensor::from_vec(&[d], vec![0.0; d])?;
            let mut spec = InterventionSpec::default();
            for loc in iv.constituents.keys() {
                spec = spec.merge(InterventionSpec::head_replace(
                    *loc,
                    zero.clone(),
                    PositionSelector::LastPromptToken,
                ));
            }
            Ok(spec)
        }
        ApplyMode::RandomControl { seed } => {
            let norm = iv.theta.iter().map(|x| x * x).sum::<f64>().sqrt();
            let v = if norm == 0.0 {
                vec![0.0; d]
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let dist = Normal::new(0.0, 1.0).unwrap();
                let mut v: Vec<f64> = (0..d).map(|_| dist.sample(&mut rng)).collect();
                let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                for x in v.iter_mut() {
                    *x *= norm / vn;
                }
                v
            };
            Ok(InterventionSpec::residual_add(
                layer,
                Tensor::from_vec(&[d], v)?,
                1.0,
                PositionSelector::LastPromptToken,
            ))
        }
    }
}

/// One intervened forward; returns the logits.
pub fn apply_iv(
    model: &Model,
    tokens: &[usize],
    last_prompt_token: usize,
    iv: &InstructionVector,
    layer: usize,
    mode: ApplyMode,
) -> Result<Tensor> {
    let spec = iv_intervention(iv, layer, mode)?;
    Ok(model
        .forward(tokens, false, Some((&spec, last_prompt_token)))?
        .logits)
}

/// Zero-shot accuracy with θ_c added (s=1) at each layer in turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSweep {
    pub accuracy: Vec<f64>,
    pub best_layer: usize,
}

pub fn sweep_layers(
    model: &Model,
    world: &World,
    iv: &InstructionVector,
    task: &TaskSpec,
    n_examples: usize,
    seed: u64,
) -> Result<LayerSweep> {
    let mut accuracy = Vec::with_capacity(model.config.n_layers);
    for layer in 0..model.config.n_layers {
        let spec = EvalSpec {
            set_id: format!("{}-sweep-l{layer}", task.id),
            task: task.clone(),
            mode: EvalMode::ZeroShot,
            form: EvalForm::Instruction,
            n_examples,
            seed,
        };
        let intervention = iv_intervention(iv, layer, ApplyMode::Add { scale: 1.0 })?;
        accuracy.push(evaluate_set(model, world, &spec, Some(&intervention))?.accuracy);
    }
    let mut best_layer = 0;
    for (l, &a) in accuracy.iter().enumerate() {
        if a > accuracy[best_layer] {
            best_layer = l;
        }
    }
    Ok(LayerSweep {
        accuracy,
        best_layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadLocation, ModelConfig};
    use crate::tasks::{build_world, make_examples, render_zero_shot, Split, TaskFamily, WorldSizes};

    fn setup() -> (World, Model, TaskSpec, InstructionVector) {
        let w = build_world(3, &WorldSizes::default()).unwrap();
        let m = Model::new(ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 16,
            d_head: 8,
            d_mlp: 32,
            vocab_size: w.layout.vocab_size,
            max_context: 160,
            seed: 50,
            ..Default::default()
        })
        .unwrap();
        let t = TaskSpec {
            id: "a".into(),
            family: TaskFamily::ListLast,
            instruction: vec![w.layout.fresh_instr.start + 2],
            relation: 0,
            seed: 51,
        };
        let iv = InstructionVector {
            task_id: t.id.clone(),
            theta: (0..16).map(|i| 0.1 * i as f64).collect(),
            constituents: vec![(HeadLocation::new(1, 0), (0..16).map(|i| 0.1 * i as f64).collect())]
                .into_iter()
                .collect(),
            fingerprint: m.fingerprint(),
            n_shots: 10,
        };
        (w, m, t, iv)
    }

    #[test]
    fn zero_scale_is_an_exact_identity() {
        let (w, m, t, iv) = setup();
        let q = &make_examples(&w, &t, 1, Split::Test).unwrap()[0];
        let tokens = render_zero_shot(&w, q);
        let last = tokens.len() - 1;
        let clean = m.forward(&tokens, false, None).unwrap().logits;
        let zeroed = apply_iv(&m, &tokens, last, &iv, 1, ApplyMode::Add { scale: 0.0 }).unwrap();
        assert_eq!(clean, zeroed);
    }

    #[test]
    fn zero_norm_random_control_is_an_exact_identity() {
        let (w, m, t, mut iv) = setup();
        iv.theta = vec![0.0; 16];
        let q = &make_examples(&w, &t, 1, Split::Test).unwrap()[0];
        let tokens = render_zero_shot(&w, q);
        let last = tokens.len() - 1;
        let clean = m.forward(&tokens, false, None).unwrap().logits;
        let ctl =
            apply_iv(&m, &tokens, last, &iv, 0, ApplyMode::RandomControl { seed: 7 }).unwrap();
        assert_eq!(clean, ctl);
    }

    #[test]
    fn random_control_preserves_norm_and_changes_logits() {
        let (w, m, t, iv) = setup();
        let spec = iv_intervention(&iv, 0, ApplyMode::RandomControl { seed: 3 }).unwrap();
        let theta_norm: f64 = iv.theta.iter().map(|x| x * x).sum::<f64>().sqrt();
        match &spec.edits[0] {
            crate::model::Edit::ResidualAdd { vector, .. } => {
                let n: f64 = vector.data().iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - theta_norm).abs() < 1e-12);
                assert_ne!(vector.data(), iv.theta.as_slice());
            }
            _ => panic!("expected residual add"),
        }
        let q = &make_examples(&w, &t, 1, Split::Test).unwrap()[0];
        let tokens = render_zero_shot(&w, q);
        let last = tokens.len() - 1;
        let clean = m.forward(&tokens, false, None).unwrap().logits;
        let added = apply_iv(&m, &tokens, last, &iv, 0, ApplyMode::Add { scale: 1.0 }).unwrap();
        assert_ne!(clean, added);
    }

    #[test]
    fn ablate_builds_one_replace_per_constituent() {
        let (_, _, _, iv) = setup();
        let spec = iv_intervention(&iv, 0, ApplyMode::AblateS).unwrap();
        assert_eq!(spec.edits.len(), iv.constituents.len());
    }

    #[test]
    fn sweep_has_one_row_per_layer_and_is_deterministic() {
        let (w, m, t, iv) = setup();
        let a = sweep_layers(&m, &w, &iv, &t, 6, 0).unwrap();
        let b = sweep_layers(&m, &w, &iv, &t, 6, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.accuracy.len(), m.config.n_layers);
        assert!(a.best_layer < m.config.n_layers);
    }

    #[test]
    fn invalid_layer_rejected_at_forward() {
        let (w, m, t, iv) = setup();
        let q = &make_examples(&w, &t, 1, Split::Test).unwrap()[0];
        let tokens = render_zero_shot(&w, q);
        let last = tokens.len() - 1;
        assert!(apply_iv(&m, &tokens, last, &iv, 9, ApplyMode::Add { scale: 1.0 }).is_err());
    }
}
