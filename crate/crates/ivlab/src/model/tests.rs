use super::*;
use crate::numerics::{
    finite_diff_check, stable_log_softmax, GradCheckOptions, Graph, Precision, Tensor,
};

fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        d_head: 4,
        d_mlp: 16,
        vocab_size: 12,
        max_context: 10,
        seed,
        ..Default::default()
    }
}

fn tiny_model(seed: u64) -> Model {
    Model::new(tiny_config(seed)).unwrap()
}

#[test]
fn config_validation() {
    let mut cfg = tiny_config(0);
    cfg.d_head = 5;
    assert!(cfg.validate().is_err());
}

#[test]
fn forward_is_deterministic() {
    let m = tiny_model(3);
    let a = m.forward(&[1, 2, 3, 4], false, None).unwrap();
    let b = m.forward(&[1, 2, 3, 4], false, None).unwrap();
    assert_eq!(a.logits, b.logits);
}

#[test]
fn rejects_bad_tokens() {
    let m = tiny_model(0);
    assert!(m.forward(&[99], false, None).is_err());
    assert!(m.forward(&[], false, None).is_err());
    assert!(m.forward(&vec![1; 11], false, None).is_err());
}

#[test]
fn causality_editing_later_tokens() {
    let m = tiny_model(5);
    let a = m.forward(&[1, 2, 3, 4, 5], false, None).unwrap();
    let b = m.forward(&[1, 2, 3, 9, 5], false, None).unwrap();
    // positions before the edited token are bit-identical
    for t in 0..3 {
        assert_eq!(a.logits.row(t), b.logits.row(t), "row {t} changed");
    }
    assert_ne!(a.logits.row(3), b.logits.row(3));
}

#[test]
fn zero_scale_residual_add_is_identity() {
    let m = tiny_model(1);
    let clean = m.forward(&[1, 2, 3], false, None).unwrap();
    let theta = Tensor::from_vec(&[8], (0..8).map(|i| i as f64).collect()).unwrap();
    let iv = InterventionSpec::residual_add(1, theta, 0.0, PositionSelector::LastPromptToken);
    let edited = m.forward(&[1, 2, 3], false, Some((&iv, 2))).unwrap();
    assert_eq!(clean.logits, edited.logits);
}

#[test]
fn self_replacement_is_identity() {
    let m = tiny_model(2);
    let tokens = [1, 2, 3, 4];
    let clean = m.forward(&tokens, true, None).unwrap();
    let rec = clean.record.unwrap();
    let loc = HeadLocation::new(1, 0);
    let pos = 3;
    let vec = Tensor::from_vec(&[8], rec.get(loc, pos).unwrap().to_vec()).unwrap();
    let iv = InterventionSpec::head_replace(loc, vec, PositionSelector::Explicit(vec![pos]));
    let edited = m.forward(&tokens, false, Some((&iv, 3))).unwrap();
    assert_eq!(clean.logits, edited.logits);
}

#[test]
fn record_unaffected_by_later_layer_intervention() {
    let m = tiny_model(2);
    let tokens = [1, 2, 3];
    let clean = m.forward(&tokens, true, None).unwrap();
    let theta = Tensor::from_vec(&[8], vec![1.0; 8]).unwrap();
    let iv = InterventionSpec::residual_add(1, theta, 2.0, PositionSelector::LastPromptToken);
    let edited = m.forward(&tokens, true, Some((&iv, 2))).unwrap();
    let (ra, rb) = (clean.record.unwrap(), edited.record.unwrap());
    for j in 0..2 {
        for pos in 0..3 {
            let loc = HeadLocation::new(0, j);
            assert_eq!(ra.get(loc, pos), rb.get(loc, pos));
            // layer 1 heads sit before the layer-1 residual_add site too
            let loc1 = HeadLocation::new(1, j);
            assert_eq!(ra.get(loc1, pos), rb.get(loc1, pos));
        }
    }
}

#[test]
fn sum_of_heads_decomposition() {
    // zero every head of layer 0 and add back the recorded per-head sums:
    // the result must match the clean forward.
    let m = tiny_model(7);
    let tokens = [1, 2, 3, 4, 5];
    let clean = m.forward(&tokens, true, None).unwrap();
    let rec = clean.record.unwrap();
    let mut edits = Vec::new();
    for j in 0..2 {
        edits.push(Edit::HeadReplace {
            loc: HeadLocation::new(0, j),
            vector: Tensor::zeros(&[8]),
            positions: PositionSelector::Explicit((0..tokens.len()).collect()),
        });
    }
    for pos in 0..tokens.len() {
        let mut sum = vec![0.0; 8];
        for j in 0..2 {
            for (d, v) in sum.iter_mut().zip(rec.get(HeadLocation::new(0, j), pos).unwrap()) {
                *d += v;
            }
        }
        edits.push(Edit::ResidualAdd {
            layer: 0,
            vector: Tensor::from_vec(&[8], sum).unwrap(),
            scale: 1.0,
            positions: PositionSelector::Explicit(vec![pos]),
        });
    }
    let iv = InterventionSpec { edits };
    let rebuilt = m.forward(&tokens, false, Some((&iv, 4))).unwrap();
    for (a, b) in clean.logits.data().iter().zip(rebuilt.logits.data()) {
        let rel = (a - b).abs() / a.abs().max(b.abs()).max(1e-8);
        assert!(rel < 1e-6, "decomposition mismatch: {a} vs {b}");
    }
}

#[test]
fn intervention_target_validation() {
    let m = tiny_model(0);
    let theta = Tensor::zeros(&[8]);
    let bad_layer =
        InterventionSpec::residual_add(9, theta.clone(), 1.0, PositionSelector::LastPromptToken);
    assert!(m.forward(&[1, 2], false, Some((&bad_layer, 1))).is_err());
    let bad_head = InterventionSpec::head_replace(
        HeadLocation::new(0, 5),
        theta.clone(),
        PositionSelector::LastPromptToken,
    );
    assert!(m.forward(&[1, 2], false, Some((&bad_head, 1))).is_err());
    let bad_pos = InterventionSpec::residual_add(
        0,
        theta,
        1.0,
        PositionSelector::Explicit(vec![7]),
    );
    assert!(m.forward(&[1, 2], false, Some((&bad_pos, 1))).is_err());
}

#[test]
fn fresh_adapter_is_noop() {
    let base = tiny_model(4);
    let clean = base.forward(&[1, 2, 3], false, None).unwrap();
    let mut with_adapter = base.clone();
    with_adapter.add_adapter("t", 2, 4.0, 11);
    let out = with_adapter.forward(&[1, 2, 3], false, None).unwrap();
    assert_eq!(clean.logits, out.logits);
}

#[test]
fn adapter_alpha_scales_delta_linearly() {
    let mut m = tiny_model(4);
    m.add_adapter("t", 2, 4.0, 11);
    // give B nonzero content so the adapter acts
    let bid = m.params.id("ad0.l0.q.b").unwrap();
    for (i, v) in m.params.get_mut(bid).value.data_mut().iter_mut().enumerate() {
        *v = 0.01 * (i as f64 % 5.0 - 2.0);
    }
    let base = tiny_model(4);
    let clean = base.forward(&[1, 2, 3], false, None).unwrap();
    let one = m.forward(&[1, 2, 3], false, None).unwrap();
    m.adapters[0].alpha = 8.0;
    let two = m.forward(&[1, 2, 3], false, None).unwrap();
    // the weight delta doubles exactly; first-layer q pre-activations double.
    // logits respond nonlinearly, so check the delta at the q projection by
    // reconstructing it from the adapter matrices.
    let a = &base.params.by_name("base.l0.wq").unwrap().value; // unchanged base
    assert_eq!(a.data(), m.params.by_name("base.l0.wq").unwrap().value.data());
    assert_ne!(clean.logits, one.logits);
    assert_ne!(one.logits, two.logits);
    let am = &m.params.by_name("ad0.l0.q.a").unwrap().value;
    let bm = &m.params.by_name("ad0.l0.q.b").unwrap().value;
    let delta = |alpha: f64| -> Vec<f64> {
        let (d, r) = (8, 2);
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut s = 0.0;
                for l in 0..r {
                    s += am.data()[i * r + l] * bm.data()[l * d + j];
                }
                out[i * d + j] = alpha / r as f64 * s;
            }
        }
        out
    };
    let d1 = delta(4.0);
    let d2 = delta(8.0);
    for (x, y) in d1.iter().zip(&d2) {
        assert_eq!(2.0 * x, *y);
    }
}

#[test]
fn tiny_transformer_gradcheck() {
    let mut m = tiny_model(9);
    m.add_adapter("t", 2, 4.0, 3);
    let tokens = [1, 2, 3, 4, 5];
    let mask = [false, false, false, true, true];
    let pairs = Model::sequence_loss_pairs(&tokens, &mask).unwrap();
    let cfg = m.config.clone();
    let adapters = m.adapters.clone();
    let precision = m.precision;
    let report = finite_diff_check(
        &mut m.params,
        |ps| {
            let probe = Model {
                config: cfg.clone(),
                params: ps.clone(),
                adapters: adapters.clone(),
                precision,
            };
            let mut g = Graph::new(Precision::F64);
            let mut leaves = ParamNodes::default();
            let logits = probe.build_forward(&mut g, &mut leaves, &tokens, None, None)?;
            let loss = g.masked_nll_mean(logits, &pairs);
            Ok((g, loss))
        },
        &GradCheckOptions {
            samples_per_tensor: Some(6),
            seed: 0,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(
        report.pass,
        "max relative error {} (eps {})",
        report.max_rel_err, report.epsilon
    );
}

#[test]
fn gradcheck_through_intervention() {
    // the residual_add edit is a differentiable pass-through
    let mut m = tiny_model(10);
    let tokens = [1, 2, 3, 4];
    let mask = [false, false, false, true];
    let pairs = Model::sequence_loss_pairs(&tokens, &mask).unwrap();
    let theta = Tensor::from_vec(&[8], (0..8).map(|i| 0.1 * i as f64).collect()).unwrap();
    let spec = InterventionSpec::residual_add(1, theta, 1.0, PositionSelector::LastPromptToken);
    let cfg = m.config.clone();
    let resolved = spec.resolve(&cfg, tokens.len(), 2).unwrap();
    let precision = m.precision;
    let report = finite_diff_check(
        &mut m.params,
        |ps| {
            let probe = Model {
                config: cfg.clone(),
                params: ps.clone(),
                adapters: vec![],
                precision,
            };
            let mut g = Graph::new(Precision::F64);
            let mut leaves = ParamNodes::default();
            let logits =
                probe.build_forward(&mut g, &mut leaves, &tokens, Some(&resolved), None)?;
            let loss = g.masked_nll_mean(logits, &pairs);
            Ok((g, loss))
        },
        &GradCheckOptions {
            samples_per_tensor: Some(6),
            seed: 1,
            ..Default::default()
        },
    )
    .unwrap();
    assert!(report.pass, "max relative error {}", report.max_rel_err);
}

#[test]
fn uniform_model_logprob() {
    let mut m = tiny_model(6);
    let wu = m.params.id("base.wu").unwrap();
    m.params.get_mut(wu).value.data_mut().fill(0.0);
    let lp = m.completion_logprob(&[1, 2], &[3], None).unwrap();
    let expect = (1.0 / 12.0f64).ln();
    assert!((lp - expect).abs() < 1e-12, "{lp} vs {expect}");
}

#[test]
fn completion_logprob_matches_sequence_loss() {
    let m = tiny_model(8);
    let prompt = [1, 2, 3];
    let answer = [4, 5];
    let lp = m.completion_logprob(&prompt, &answer, None).unwrap();
    assert!(lp <= 0.0);
    let tokens = [1, 2, 3, 4, 5];
    let mask = [false, false, false, true, true];
    let logits = m.forward(&tokens, false, None).unwrap().logits;
    let loss = Model::sequence_loss_value(&logits, &tokens, &mask).unwrap();
    assert!((lp + loss * answer.len() as f64).abs() < 1e-12);
}

#[test]
fn sequence_loss_uniform_and_saturated() {
    let tokens = [0, 2];
    let mask = [false, true];
    let uniform = Tensor::from_vec(&[2, 4], vec![0.0; 8]).unwrap();
    let loss = Model::sequence_loss_value(&uniform, &tokens, &mask).unwrap();
    assert!((loss - 4.0f64.ln()).abs() < 1e-12);

    let mut sat = vec![0.0; 8];
    sat[2] = 50.0; // row 0, target 2
    let saturated = Tensor::from_vec(&[2, 4], sat).unwrap();
    let loss = Model::sequence_loss_value(&saturated, &tokens, &mask).unwrap();
    assert!(loss < 1e-9);

    // hand-built example, computed independently from log-softmax
    let logits = Tensor::from_vec(&[2, 4], vec![1.0, 2.0, 0.5, -1.0, 0.0, 0.0, 3.0, 1.0]).unwrap();
    let loss = Model::sequence_loss_value(&logits, &tokens, &mask).unwrap();
    let hand = -stable_log_softmax(&[1.0, 2.0, 0.5, -1.0])[2];
    assert!((loss - hand).abs() < 1e-12);

    let empty = Model::sequence_loss_value(&uniform, &tokens, &[false, false]);
    assert!(empty.is_err());
}

#[test]
fn greedy_generate_behaviour() {
    let m = tiny_model(1);
    assert!(m.greedy_generate(&[1, 2], 0, None).unwrap().is_empty());
    let a = m.greedy_generate(&[1, 2], 4, None).unwrap();
    let b = m.greedy_generate(&[1, 2], 4, None).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
}
