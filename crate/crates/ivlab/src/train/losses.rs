//! Loss assembly for pretraining and fine-tuning: batched next-token loss,
//! IV-guided terms (progressive intervention and IV-KL alignment), LwF
//! distillation, and the EWC quadratic penalty.

use std::collections::BTreeMap;

use crate::error::{IvLabError, Result};
use crate::iv::{iv_intervention, ApplyMode, InstructionVector};
use crate::model::{InterventionSpec, Model, ParamNodes};
use crate::numerics::{stable_softmax, Graph, NodeId, Tensor};
use crate::tasks::{render_zero_shot, ExampleQuad, World};

/// One training sequence: prompt plus answer tokens, with the answer
/// positions masked in.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub tokens: Vec<usize>,
    pub mask: Vec<bool>,
    pub last_prompt_token: usize,
}

impl TrainItem {
    /// Instruction-form supervised sequence `BOS c x -> y^c`.
    pub fn from_quad(world: &World, quad: &ExampleQuad) -> TrainItem {
        let prompt = render_zero_shot(world, quad);
        let last = prompt.len() - 1;
        let mut tokens = prompt;
        let mut mask = vec![false; tokens.len()];
        tokens.extend_from_slice(&quad.yc);
        mask.resize(tokens.len(), true);
        TrainItem {
            tokens,
            mask,
            last_prompt_token: last,
        }
    }

    /// Language-modeling sequence: every token after the first is a target.
    pub fn lm(tokens: Vec<usize>) -> TrainItem {
        let mut mask = vec![true; tokens.len()];
        mask[0] = false;
        TrainItem {
            last_prompt_token: 0,
            mask,
            tokens,
        }
    }
}

/// Mean per-item masked cross-entropy over a batch, built into `g` with
/// shared parameter leaves. `intervention` (if any) applies to every item,
/// resolved at that item's last prompt token.
pub fn build_batch_loss(
    g: &mut Graph,
    leaves: &mut ParamNodes,
    model: &Model,
    items: &[TrainItem],
    intervention: Option<&InterventionSpec>,
) -> Result<NodeId> {
    if items.is_empty() {
        return Err(IvLabError::InvalidArgument("empty batch".into()));
    }
    let mut total: Option<NodeId> = None;
    for item in items {
        let resolved = match intervention {
            Some(spec) => Some(spec.resolve(
                &model.config,
                item.tokens.len(),
                item.last_prompt_token,
            )?),
            None => None,
        };
        let logits = model.build_forward(g, leaves, &item.tokens, resolved.as_ref(), None)?;
        let pairs = Model::sequence_loss_pairs(&item.tokens, &item.mask)?;
        let li = g.masked_nll_mean(logits, &pairs);
        total = Some(match total {
            Some(t) => g.add(t, li),
            None => li,
        });
    }
    Ok(g.scale(total.unwrap(), 1.0 / items.len() as f64))
}

/// Eq. 3: task loss under the progressive intervention h -> h + s·θ_c.
/// Gradients flow through the edited forward; θ_c itself is a constant.
pub fn build_ivg_intervened_loss(
    g: &mut Graph,
    leaves: &mut ParamNodes,
    model: &Model,
    items: &[TrainItem],
    iv: &InstructionVector,
    layer: usize,
    s: f64,
) -> Result<NodeId> {
    if !(0.0..=1.0).contains(&s) {
        return Err(IvLabError::InvalidArgument(format!("s={s} outside [0,1]")));
    }
    let spec = iv_intervention(iv, layer, ApplyMode::Add { scale: s })?;
    build_batch_loss(g, leaves, model, items, Some(&spec))
}

/// Value-level Eq. 3 loss.
pub fn ivg_intervened_loss(
    model: &Model,
    items: &[TrainItem],
    iv: &InstructionVector,
    layer: usize,
    s: f64,
) -> Result<f64> {
    let mut g = Graph::new(model.precision);
    let mut leaves = ParamNodes::default();
    let loss = build_ivg_intervened_loss(&mut g, &mut leaves, model, items, iv, layer, s)?;
    g.scalar_value(loss)
}

/// Eq. 4: mean KL(P_intervened ‖ P_zero-shot) at the answer position. The
/// intervened branch (s = 1) is the teacher and receives no gradient; the
/// zero-shot branch is the student.
pub fn build_ivg_kl_loss(
    g: &mut Graph,
    leaves: &mut ParamNodes,
    model: &Model,
    items: &[TrainItem],
    iv: &InstructionVector,
    layer: usize,
) -> Result<NodeId> {
    if items.is_empty() {
        return Err(IvLabError::InvalidArgument("empty batch".into()));
    }
    let spec = iv_intervention(iv, layer, ApplyMode::Add { scale: 1.0 })?;
    let mut total: Option<NodeId> = None;
    for item in items {
        // teacher: value-only intervened forward, gradient-blocked
        let teacher_fwd = model.forward(
            &item.tokens,
            false,
            Some((&spec, item.last_prompt_token)),
        )?;
        let probs = stable_softmax(teacher_fwd.logits.row(item.last_prompt_token));
        let teacher = Tensor::from_vec(&[probs.len()], probs)?;
        // student: in-graph zero-shot forward
        let logits = model.build_forward(g, leaves, &item.tokens, None, None)?;
        let student_row = g.row(logits, item.last_prompt_token);
        let kl = g.kl_const_teacher(student_row, teacher);
        total = Some(match total {
            Some(t) => g.add(t, kl),
            None => kl,
        });
    }
    Ok(g.scale(total.unwrap(), 1.0 / items.len() as f64))
}

/// Value-level Eq. 4 loss; always >= 0.
pub fn ivg_kl_loss(
    model: &Model,
    items: &[TrainItem],
    iv: &InstructionVector,
    layer: usize,
) -> Result<f64> {
    let mut g = Graph::new(model.precision);
    let mut leaves = ParamNodes::default();
    let loss = build_ivg_kl_loss(&mut g, &mut leaves, model, items, iv, layer)?;
    g.scalar_value(loss)
}

/// LwF distillation: KL between the frozen previous model's
/// temperature-softened answer distribution and the current one.
pub fn build_lwf_distill_loss(
    g: &mut Graph,
    leaves: &mut ParamNodes,
    model: &Model,
    previous: &Model,
    items: &[TrainItem],
    temperature: f64,
) -> Result<NodeId> {
    if items.is_empty() {
        return Err(IvLabError::InvalidArgument("empty batch".into()));
    }
    if temperature <= 0.0 {
        return Err(IvLabError::InvalidArgument(
            "temperature must be positive".into(),
        ));
    }
    let mut total: Option<NodeId> = None;
    for item in items {
        let prev = previous.forward(&item.tokens, false, None)?;
        let soft: Vec<f64> = prev
            .logits
            .row(item.last_prompt_token)
            .iter()
            .map(|x| x / temperature)
            .collect();
        let probs = stable_softmax(&soft);
        let teacher = Tensor::from_vec(&[probs.len()], probs)?;
        let logits = model.build_forward(g, leaves, &item.tokens, None, None)?;
        let row = g.row(logits, item.last_prompt_token);
        let scaled = g.scale(row, 1.0 / temperature);
        let kl = g.kl_const_teacher(scaled, teacher);
        total = Some(match total {
            Some(t) => g.add(t, kl),
            None => kl,
        });
    }
    Ok(g.scale(total.unwrap(), 1.0 / items.len() as f64))
}

/// Value-level LwF loss.
pub fn lwf_distill_loss(
    model: &Model,
    previous: &Model,
    items: &[TrainItem],
    temperature: f64,
) -> Result<f64> {
    let mut g = Graph::new(model.precision);
    let mut leaves = ParamNodes::default();
    let loss = build_lwf_distill_loss(&mut g, &mut leaves, model, previous, items, temperature)?;
    g.scalar_value(loss)
}

/// Diagonal-Fisher/snapshot pair captured when a task completes.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EwcState {
    /// Parameter name -> mean squared gradient.
    pub fisher: BTreeMap<String, Vec<f64>>,
    /// Parameter name -> values at convergence.
    pub snapshot: BTreeMap<String, Vec<f64>>,
}

/// Empirical diagonal Fisher: mean over items of the squared gradient of the
/// per-example loss, over the currently trainable parameters.
pub fn ewc_fisher(model: &Model, items: &[TrainItem]) -> Result<BTreeMap<String, Vec<f64>>> {
    if items.is_empty() {
        return Err(IvLabError::InvalidArgument("no samples for Fisher".into()));
    }
    let mut params = model.params.clone();
    let trainable = params.trainable_ids();
    let mut fisher: BTreeMap<String, Vec<f64>> = trainable
        .iter()
        .map(|&id| {
            let p = params.get(id);
            (p.name.clone(), vec![0.0; p.value.len()])
        })
        .collect();
    for item in items {
        params.zero_grad();
        let mut g = Graph::new(model.precision);
        let mut leaves = ParamNodes::default();
        let probe = Model {
            config: model.config.clone(),
            params: params.clone(),
            adapters: model.adapters.clone(),
            precision: model.precision,
        };
        let loss = build_batch_loss(&mut g, &mut leaves, &probe, std::slice::from_ref(item), None)?;
        g.backward(loss, &mut params)?;
        for &id in &trainable {
            let p = params.get(id);
            let acc = fisher.get_mut(&p.name).unwrap();
            for (a, gr) in acc.iter_mut().zip(p.grad.data()) {
                *a += gr * gr;
            }
        }
    }
    let n = items.len() as f64;
    for v in fisher.values_mut() {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    Ok(fisher)
}

/// λ/2 · Σ F_i (θ_i − θ*_i)², over trainable parameters present in the
/// state. Zero at the snapshot by construction.
pub fn build_ewc_penalty(
    g: &mut Graph,
    leaves: &mut ParamNodes,
    model: &Model,
    state: &EwcState,
    lambda: f64,
) -> Result<NodeId> {
    let mut total: Option<NodeId> = None;
    for (name, fisher) in &state.fisher {
        let Some(id) = model.params.id(name) else {
            return Err(IvLabError::InvalidArgument(format!(
                "EWC state refers to unknown parameter {name}"
            )));
        };
        let p = model.params.get(id);
        let snap = &state.snapshot[name];
        let node = leaves.get(g, &model.params, id);
        let snap_t = Tensor::from_vec(p.value.shape(), snap.clone())?;
        let fisher_t = Tensor::from_vec(p.value.shape(), fisher.clone())?;
        let snap_c = g.constant(snap_t);
        let fisher_c = g.constant(fisher_t);
        let diff = g.sub(node, snap_c);
        let sq = g.mul(diff, diff);
        let weighted = g.mul(fisher_c, sq);
        let term = g.sum_all(weighted);
        total = Some(match total {
            Some(t) => g.add(t, term),
            None => term,
        });
    }
    let total = total
        .ok_or_else(|| IvLabError::InvalidArgument("EWC state has no parameters".into()))?;
    Ok(g.scale(total, lambda / 2.0))
}
