//! Pretraining corpus: a mix of bare fact statements, ICL-style bursts with
//! per-sequence random rules (the ingredient that induces in-context
//! learning), and supervised snippets for the BASE instruction set.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::tasks::suite::base_tasks;
use crate::tasks::task::{make_examples, ExampleQuad, Split};
use crate::tasks::world::World;

/// Mixture weights over the three sequence categories; must sum to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainMix {
    pub knowledge: f64,
    pub icl_burst: f64,
    pub base_instruction: f64,
}

impl Default for PretrainMix {
    fn default() -> Self {
        PretrainMix {
            knowledge: 0.20,
            icl_burst: 0.55,
            base_instruction: 0.25,
        }
    }
}

impl PretrainMix {
    pub fn validate(&self) -> Result<()> {
        let w = [self.knowledge, self.icl_burst, self.base_instruction];
        if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(IvLabError::InvalidArgument(format!(
                "mix weights must be non-negative and sum to 1, got {w:?}"
            )));
        }
        Ok(())
    }
}

/// Emit `n_sequences` training sequences of at most `max_len` tokens.
/// Deterministic in (world, mix, seed).
pub fn emit_pretrain_corpus(
    world: &World,
    mix: &PretrainMix,
    n_sequences: usize,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    mix.validate()?;
    if max_len < 16 {
        return Err(IvLabError::InvalidArgument(
            "max_len too small for any snippet".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0_d9u64);
    // Base-task training examples, drawn once per emission.
    let base: Vec<(Vec<usize>, Vec<ExampleQuad>)> = base_tasks(world)
        .into_iter()
        .map(|t| {
            let ex = make_examples(world, &t, 400, Split::Train)?;
            Ok((t.instruction.clone(), ex))
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(n_sequences);
    for _ in 0..n_sequences {
        let u: f64 = rng.gen();
        let seq = if u < mix.knowledge {
            knowledge_sequence(world, max_len, &mut rng)
        } else if u < mix.knowledge + mix.icl_burst {
            burst_sequence(world, max_len, &mut rng)
        } else {
            base_instruction_sequence(world, &base, max_len, &mut rng)
        };
        out.push(seq);
    }
    Ok(out)
}

fn pick_entity(world: &World, rng: &mut ChaCha8Rng) -> usize {
    rng.gen_range(world.layout.entities.clone())
}

fn distinct_entities(world: &World, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = world.layout.entities.clone().collect();
    pool.shuffle(rng);
    pool.truncate(n);
    pool
}

/// `BOS (rel e -> attr SEP)*` — bare fact statements.
fn knowledge_sequence(world: &World, max_len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut t = vec![world.layout.bos];
    while t.len() + 5 <= max_len {
        let rel = rng.gen_range(0..world.sizes.n_relations);
        let e = pick_entity(world, rng);
        t.extend([
            world.relation_token(rel),
            e,
            world.layout.arrow,
            world.fact(rel, e),
            world.layout.sep,
        ]);
    }
    t
}

/// Probability that a burst carries the rule's own base-instruction token
/// instead of an uninformative burst token. The informative variant
/// supervises rule execution given an explicit identity; the uninformative
/// one forces the rule to be read off the demonstrations.
const SCAFFOLD_P: f64 = 0.3;

/// ICL burst: demonstrations of a per-sequence rule, in the same surface
/// format as evaluation prompts. The rule is drawn fresh per sequence from
/// rules that share the surface, so with an uninformative instruction token
/// only the demonstrations disambiguate it.
fn burst_sequence(world: &World, max_len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let l = &world.layout;
    let burst_c = rng.gen_range(l.burst_instr.clone());
    // Randomized geometry: a fact-statement prefix of variable length and a
    // variable burst end. With fixed geometry (every burst starting at BOS
    // and filling the window) the model keys rules to absolute positions
    // instead of reading the demonstrations.
    let n_prefix = rng.gen_range(0..6usize);
    let target_len = rng.gen_range((5 * n_prefix + 40).min(max_len)..=max_len);
    // base_instr order matches `base_tasks`: list-first/mid/last are 0..3,
    // comp-first/mid/last are 3..6.
    let scaffold = |base_idx: usize, rng: &mut ChaCha8Rng| {
        if rng.gen_bool(SCAFFOLD_P) {
            l.base_instr.start + base_idx
        } else {
            burst_c
        }
    };
    let mut t = vec![l.bos];
    for _ in 0..n_prefix {
        let rel = rng.gen_range(0..world.sizes.n_relations);
        let e = pick_entity(world, rng);
        t.extend([
            world.relation_token(rel),
            e,
            l.arrow,
            world.fact(rel, e),
            l.sep,
        ]);
    }
    let markers = |es: &[usize]| -> Vec<usize> {
        es.iter()
            .enumerate()
            .flat_map(|(i, &e)| [world.marker_token(i), e])
            .collect()
    };
    let u: f64 = rng.gen();
    if u < 0.40 {
        // List surface: copy the entity in the per-sequence marker slot.
        let p = rng.gen_range(0..3usize);
        let c = scaffold(p, rng);
        while t.len() + 9 <= target_len {
            let es = distinct_entities(world, 3, rng);
            t.push(c);
            t.extend(markers(&es));
            t.extend([l.arrow, es[p], l.sep]);
        }
    } else if u < 0.80 {
        // Composed surface: label of the fact of the entity in slot p.
        let p = rng.gen_range(0..3usize);
        let rel = rng.gen_range(0..world.sizes.n_relations);
        let c = scaffold(3 + p, rng);
        while t.len() + 10 <= target_len {
            let es = distinct_entities(world, 3, rng);
            let truth = world.fact(rel, es[p]);
            t.extend([c, world.relation_token(rel)]);
            t.extend(markers(&es));
            t.extend([l.arrow, world.label_of_attr(rel, truth), l.sep]);
        }
    } else {
        // Per-sequence random entity -> option-letter map over a small
        // support; the classic induction recipe. Always uninformative.
        let support = distinct_entities(world, rng.gen_range(4..=6), rng);
        let labels: Vec<usize> = support
            .iter()
            .map(|_| world.option_token(rng.gen_range(0..world.sizes.n_options)))
            .collect();
        let rel = rng.gen_range(0..world.sizes.n_relations);
        while t.len() + 7 <= target_len {
            let i = rng.gen_range(0..support.len());
            let distractor = pick_entity(world, rng);
            t.extend([burst_c, world.relation_token(rel), support[i], distractor]);
            t.extend([l.arrow, labels[i], l.sep]);
        }
    }
    t
}

/// Supervised snippets for one BASE task: `BOS (c x -> y^c SEP)*`.
fn base_instruction_sequence(
    world: &World,
    base: &[(Vec<usize>, Vec<ExampleQuad>)],
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let (c, examples) = &base[rng.gen_range(0..base.len())];
    let target_len = rng.gen_range(max_len / 2..=max_len);
    let mut t = vec![world.layout.bos];
    loop {
        let q = &examples[rng.gen_range(0..examples.len())];
        let need = c.len() + q.x.len() + 1 + q.yc.len() + 1;
        if t.len() + need > target_len {
            break;
        }
        t.extend_from_slice(c);
        t.extend_from_slice(&q.x);
        t.push(world.layout.arrow);
        t.extend_from_slice(&q.yc);
        t.push(world.layout.sep);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::world::{build_world, WorldSizes};

    #[test]
    fn pure_knowledge_mix_has_no_instruction_tokens() {
        let w = build_world(4, &WorldSizes::default()).unwrap();
        let mix = PretrainMix {
            knowledge: 1.0,
            icl_burst: 0.0,
            base_instruction: 0.0,
        };
        let seqs = emit_pretrain_corpus(&w, &mix, 30, 64, 0).unwrap();
        for s in &seqs {
            for &tok in s {
                assert!(!w.layout.base_instr.contains(&tok));
                assert!(!w.layout.burst_instr.contains(&tok));
                assert!(!w.layout.fresh_instr.contains(&tok));
            }
        }
    }

    #[test]
    fn invalid_mix_rejected() {
        let w = build_world(4, &WorldSizes::default()).unwrap();
        let mix = PretrainMix {
            knowledge: 0.9,
            icl_burst: 0.9,
            base_instruction: -0.8,
        };
        assert!(emit_pretrain_corpus(&w, &mix, 1, 64, 0).is_err());
    }

    #[test]
    fn default_corpus_covers_all_fact_tokens() {
        let w = build_world(4, &WorldSizes::default()).unwrap();
        let seqs = emit_pretrain_corpus(&w, &PretrainMix::default(), 400, 96, 1).unwrap();
        let mut seen = vec![false; w.layout.vocab_size];
        for s in &seqs {
            for &tok in s {
                seen[tok] = true;
            }
        }
        for r in &w.layout.attributes {
            for tok in r.clone() {
                assert!(seen[tok], "attribute token {tok} never emitted");
            }
        }
        for tok in w.layout.entities.clone() {
            assert!(seen[tok], "entity token {tok} never emitted");
        }
    }

    #[test]
    fn emission_is_deterministic() {
        let w = build_world(4, &WorldSizes::default()).unwrap();
        let a = emit_pretrain_corpus(&w, &PretrainMix::default(), 50, 64, 5).unwrap();
        let b = emit_pretrain_corpus(&w, &PretrainMix::default(), 50, 64, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.len() <= 64 && s[0] == w.layout.bos));
    }
}
