use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::model::config::{HeadLocation, ModelConfig};
use crate::model::intervention::{ActivationRecord, InterventionSpec, ResolvedIntervention};
use crate::numerics::{stable_log_softmax, Graph, NodeId, ParamId, ParamSet, Precision, Tensor};

const LN_EPS: f64 = 1e-5;

/// Metadata for one LoRA adapter in the stack. The matrices themselves live
/// in the model's parameter set under the `ad{index}.` prefix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdapterMeta {
    pub name: String,
    pub rank: usize,
    pub alpha: f64,
}

/// Decoder-only transformer with per-head activation taps, residual-stream
/// interventions, and a stack of LoRA adapters on the query/value
/// projections. Base weights are never mutated after adapters exist.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub adapters: Vec<AdapterMeta>,
    pub precision: Precision,
}

/// Reuses one graph leaf per parameter when several examples share a graph.
#[derive(Default)]
pub struct ParamNodes(BTreeMap<ParamId, NodeId>);

impl ParamNodes {
    pub fn get(&mut self, g: &mut Graph, params: &ParamSet, id: ParamId) -> NodeId {
        *self.0.entry(id).or_insert_with(|| g.param(params, id))
    }
}

pub struct ForwardOutput {
    pub logits: Tensor,
    pub record: Option<ActivationRecord>,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let init = Normal::new(0.0, 0.02).unwrap();
        // residual-projection init scaled down with depth, GPT-2 style
        let resid = Normal::new(0.0, 0.02 / ((2 * config.n_layers) as f64).sqrt()).unwrap();
        let mat = |rng: &mut ChaCha8Rng, rows: usize, cols: usize, dist: &Normal<f64>| {
            let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
            Tensor::from_vec(&[rows, cols], data).unwrap()
        };
        params.add("base.wte", mat(&mut rng, config.vocab_size, d, &init));
        params.add("base.wpe", mat(&mut rng, config.max_context, d, &init));
        for l in 0..config.n_layers {
            params.add(&format!("base.l{l}.ln1.g"), ones(d));
            params.add(&format!("base.l{l}.ln1.b"), Tensor::zeros(&[d]));
            params.add(&format!("base.l{l}.wq"), mat(&mut rng, d, d, &init));
            params.add(&format!("base.l{l}.wk"), mat(&mut rng, d, d, &init));
            params.add(&format!("base.l{l}.wv"), mat(&mut rng, d, d, &init));
            params.add(&format!("base.l{l}.wo"), mat(&mut rng, d, d, &resid));
            params.add(&format!("base.l{l}.ln2.g"), ones(d));
            params.add(&format!("base.l{l}.ln2.b"), Tensor::zeros(&[d]));
            params.add(&format!("base.l{l}.w1"), mat(&mut rng, d, config.d_mlp, &init));
            params.add(&format!("base.l{l}.w2"), mat(&mut rng, config.d_mlp, d, &resid));
        }
        params.add("base.lnf.g", ones(d));
        params.add("base.lnf.b", Tensor::zeros(&[d]));
        params.add("base.wu", mat(&mut rng, d, config.vocab_size, &init));
        Ok(Model {
            config,
            params,
            adapters: Vec::new(),
            precision: Precision::F64,
        })
    }

    /// Freeze every current parameter (base weights and existing adapters).
    pub fn freeze_all(&mut self) {
        let ids: Vec<ParamId> = self.params.iter().map(|(id, _)| id).collect();
        for id in ids {
            self.params.set_trainable(id, false);
        }
    }

    /// Push a fresh trainable adapter targeting the query and value
    /// projections of every layer. B starts at zero so the new adapter is
    /// initially a no-op.
    pub fn add_adapter(&mut self, name: &str, rank: usize, alpha: f64, seed: u64) {
        let idx = self.adapters.len();
        let d = self.config.d_model;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = Normal::new(0.0, 0.02).unwrap();
        for l in 0..self.config.n_layers {
            for target in ["q", "v"] {
                let a_data = (0..d * rank).map(|_| init.sample(&mut rng)).collect();
                self.params.add(
                    &format!("ad{idx}.l{l}.{target}.a"),
                    Tensor::from_vec(&[d, rank], a_data).unwrap(),
                );
                self.params.add(
                    &format!("ad{idx}.l{l}.{target}.b"),
                    Tensor::zeros(&[rank, d]),
                );
            }
        }
        self.adapters.push(AdapterMeta {
            name: name.to_string(),
            rank,
            alpha,
        });
    }

    /// FNV-1a hash over config and every parameter value; identifies the
    /// exact weights an extraction artifact was computed from.
    pub fn fingerprint(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        eat(serde_json::to_string(&self.config).unwrap().as_bytes());
        for (_, p) in self.params.iter() {
            eat(p.name.as_bytes());
            for v in p.value.data() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        format!("{h:016x}")
    }

    fn validate_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(IvLabError::InvalidArgument("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_context {
            return Err(IvLabError::InvalidArgument(format!(
                "sequence length {} exceeds max context {}",
                tokens.len(),
                self.config.max_context
            )));
        }
        for &t in tokens {
            if t >= self.config.vocab_size {
                return Err(IvLabError::TokenOutOfRange {
                    id: t,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Record the full forward computation for `tokens` into `g`, returning
    /// the `[seq_len, vocab]` logits node. Head contributions are captured
    /// before any edit applies at their own site.
    #[allow(clippy::too_many_arguments)]
    pub fn build_forward(
        &self,
        g: &mut Graph,
        leaves: &mut ParamNodes,
        tokens: &[usize],
        intervention: Option<&ResolvedIntervention>,
        mut record: Option<&mut ActivationRecord>,
    ) -> Result<NodeId> {
        self.validate_tokens(tokens)?;
        let cfg = &self.config;
        let (dh, nh) = (cfg.d_head, cfg.n_heads);
        let t_len = tokens.len();
        let pid = |name: &str| self.params.id(name).unwrap();
        let mut leaf = |g: &mut Graph, name: &str| leaves.get(g, &self.params, pid(name));

        let wte = leaf(g, "base.wte");
        let wpe = leaf(g, "base.wpe");
        let tok_emb = g.embed_rows(wte, tokens);
        let positions: Vec<usize> = (0..t_len).collect();
        let pos_emb = g.embed_rows(wpe, &positions);
        let mut x = g.add(tok_emb, pos_emb);

        for l in 0..cfg.n_layers {
            let ln1g = leaf(g, &format!("base.l{l}.ln1.g"));
            let ln1b = leaf(g, &format!("base.l{l}.ln1.b"));
            let normed = g.layer_norm(x, ln1g, ln1b, LN_EPS);

            let wq = leaf(g, &format!("base.l{l}.wq"));
            let wk = leaf(g, &format!("base.l{l}.wk"));
            let wv = leaf(g, &format!("base.l{l}.wv"));
            let wo = leaf(g, &format!("base.l{l}.wo"));
            let mut q = g.matmul(normed, wq);
            let k = g.matmul(normed, wk);
            let mut v = g.matmul(normed, wv);
            for (idx, meta) in self.adapters.iter().enumerate() {
                let scale = meta.alpha / meta.rank as f64;
                for (target, acc) in [("q", &mut q), ("v", &mut v)] {
                    let a = leaf(g, &format!("ad{idx}.l{l}.{target}.a"));
                    let b = leaf(g, &format!("ad{idx}.l{l}.{target}.b"));
                    let xa = g.matmul(normed, a);
                    let xab = g.matmul(xa, b);
                    let delta = g.scale(xab, scale);
                    *acc = g.add(*acc, delta);
                }
            }

            let mut attn_out: Option<NodeId> = None;
            for j in 0..nh {
                let qj = g.slice_cols(q, j * dh, dh);
                let kj = g.slice_cols(k, j * dh, dh);
                let vj = g.slice_cols(v, j * dh, dh);
                let kjt = g.transpose(kj);
                let scores = g.matmul(qj, kjt);
                let scaled = g.scale(scores, 1.0 / (dh as f64).sqrt());
                let probs = g.causal_softmax_rows(scaled);
                let ctx = g.matmul(probs, vj);
                let woj = g.slice_rows(wo, j * dh, dh);
                let mut contrib = g.matmul(ctx, woj);

                let loc = HeadLocation::new(l, j);
                if let Some(rec) = record.as_deref_mut() {
                    let val = g.value(contrib);
                    for pos in 0..t_len {
                        rec.insert(loc, pos, val.row(pos).to_vec());
                    }
                }
                if let Some(iv) = intervention {
                    if let Some(edits) = iv.head_replace.get(&loc) {
                        for (rows, vec) in edits {
                            contrib = g.replace_rows_const(contrib, rows, vec);
                        }
                    }
                }
                attn_out = Some(match attn_out {
                    Some(acc) => g.add(acc, contrib),
                    None => contrib,
                });
            }
            x = g.add(x, attn_out.unwrap());

            if let Some(iv) = intervention {
                if let Some(edits) = iv.residual_add.get(&l) {
                    for (rows, vec, scale) in edits {
                        x = g.add_rows_const(x, rows, vec, *scale);
                    }
                }
            }

            let ln2g = leaf(g, &format!("base.l{l}.ln2.g"));
            let ln2b = leaf(g, &format!("base.l{l}.ln2.b"));
            let normed2 = g.layer_norm(x, ln2g, ln2b, LN_EPS);
            let w1 = leaf(g, &format!("base.l{l}.w1"));
            let w2 = leaf(g, &format!("base.l{l}.w2"));
            let h1 = g.matmul(normed2, w1);
            let act = g.gelu(h1);
            let h2 = g.matmul(act, w2);
            x = g.add(x, h2);
        }

        let lnfg = leaf(g, "base.lnf.g");
        let lnfb = leaf(g, "base.lnf.b");
        let xf = g.layer_norm(x, lnfg, lnfb, LN_EPS);
        let wu = leaf(g, "base.wu");
        Ok(g.matmul(xf, wu))
    }

    /// Plain forward pass. `intervention`, when present, is resolved with
    /// `last_prompt_token` (used by the `LastPromptToken` selector).
    pub fn forward(
        &self,
        tokens: &[usize],
        record: bool,
        intervention: Option<(&InterventionSpec, usize)>,
    ) -> Result<ForwardOutput> {
        self.validate_tokens(tokens)?;
        let resolved = match intervention {
            Some((spec, last)) => Some(spec.resolve(&self.config, tokens.len(), last)?),
            None => None,
        };
        let mut g = Graph::new(self.precision);
        let mut leaves = ParamNodes::default();
        let mut rec = if record {
            Some(ActivationRecord::default())
        } else {
            None
        };
        let logits = self.build_forward(&mut g, &mut leaves, tokens, resolved.as_ref(), rec.as_mut())?;
        Ok(ForwardOutput {
            logits: g.try_value(logits)?.clone(),
            record: rec,
        })
    }

    /// Sum over answer tokens of log P(answer_t | prompt, answer_<t).
    /// Always <= 0.
    pub fn completion_logprob(
        &self,
        prompt: &[usize],
        answer: &[usize],
        intervention: Option<&InterventionSpec>,
    ) -> Result<f64> {
        if answer.is_empty() {
            return Err(IvLabError::InvalidArgument("empty answer".into()));
        }
        if prompt.is_empty() {
            return Err(IvLabError::InvalidArgument("empty prompt".into()));
        }
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(answer);
        let out = self.forward(
            &tokens,
            false,
            intervention.map(|iv| (iv, prompt.len() - 1)),
        )?;
        let mut total = 0.0;
        for (i, &ans) in answer.iter().enumerate() {
            let row = out.logits.row(prompt.len() - 1 + i);
            total += stable_log_softmax(row)[ans];
        }
        Ok(total)
    }

    /// Deterministic greedy decoding; ties break toward the lowest token id.
    pub fn greedy_generate(
        &self,
        prompt: &[usize],
        max_new: usize,
        intervention: Option<&InterventionSpec>,
    ) -> Result<Vec<usize>> {
        let mut tokens = prompt.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_new {
            if tokens.len() >= self.config.max_context {
                break;
            }
            let fwd = self.forward(
                &tokens,
                false,
                intervention.map(|iv| (iv, prompt.len() - 1)),
            )?;
            let row = fwd.logits.row(tokens.len() - 1);
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            tokens.push(best);
            out.push(best);
        }
        Ok(out)
    }

    /// Mean next-token cross-entropy over the masked answer positions.
    /// `output_mask[p]` marks token `p` as an answer token to be predicted.
    pub fn sequence_loss_pairs(tokens: &[usize], output_mask: &[bool]) -> Result<Vec<(usize, usize)>> {
        assert_eq!(tokens.len(), output_mask.len());
        let mut pairs = Vec::new();
        for (p, &m) in output_mask.iter().enumerate() {
            if m {
                if p == 0 {
                    return Err(IvLabError::InvalidArgument(
                        "first token cannot be an output token".into(),
                    ));
                }
                pairs.push((p - 1, tokens[p]));
            }
        }
        if pairs.is_empty() {
            return Err(IvLabError::InvalidArgument("empty output mask".into()));
        }
        Ok(pairs)
    }

    /// Value-level sequence loss from already-computed logits.
    pub fn sequence_loss_value(
        logits: &Tensor,
        tokens: &[usize],
        output_mask: &[bool],
    ) -> Result<f64> {
        let pairs = Self::sequence_loss_pairs(tokens, output_mask)?;
        let mut total = 0.0;
        for &(row, target) in &pairs {
            total -= stable_log_softmax(logits.row(row))[target];
        }
        Ok(total / pairs.len() as f64)
    }
}

fn ones(n: usize) -> Tensor {
    Tensor::from_vec(&[n], vec![1.0; n]).unwrap()
}
