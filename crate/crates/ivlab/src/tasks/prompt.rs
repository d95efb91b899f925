//! Prompt rendering: zero-shot and N-shot ICL forms, plus label-shuffled
//! counterfactual prompts.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::tasks::task::ExampleQuad;
use crate::tasks::world::World;

/// An N-shot prompt: demonstrations then the query, all instruction-form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ICLPrompt {
    pub tokens: Vec<usize>,
    /// Index of the final prompt token (the arrow before the answer slot).
    pub last_prompt_token: usize,
    pub answer: Vec<usize>,
    pub query: ExampleQuad,
    pub demos: Vec<ExampleQuad>,
    pub shuffled: bool,
    /// Demo-answer permutation applied when shuffled (identity otherwise).
    pub permutation: Vec<usize>,
}

/// Instruction-form zero-shot prompt: `BOS c x ->`.
pub fn render_zero_shot(world: &World, quad: &ExampleQuad) -> Vec<usize> {
    let mut t = vec![world.layout.bos];
    t.extend_from_slice(&quad.c);
    t.extend_from_slice(&quad.x);
    t.push(world.layout.arrow);
    t
}

/// Knowledge-form prompt: `BOS x ->` with no instruction tokens.
pub fn render_knowledge(world: &World, quad: &ExampleQuad) -> Vec<usize> {
    let mut t = vec![world.layout.bos];
    t.extend_from_slice(&quad.x);
    t.push(world.layout.arrow);
    t
}

/// Build an N-shot prompt. Demonstrations come from `demo_pool` (entries
/// token-identical to the query are skipped); with `shuffle` the demo answers
/// are permuted until at least one label moves.
pub fn build_icl_prompt(
    world: &World,
    n_shots: usize,
    query: &ExampleQuad,
    demo_pool: &[ExampleQuad],
    shuffle: bool,
    seed: u64,
) -> Result<ICLPrompt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<&ExampleQuad> = demo_pool.iter().filter(|d| d.x != query.x).collect();
    if pool.len() < n_shots {
        return Err(IvLabError::PoolExhausted(format!(
            "demo pool has {} usable entries, need {n_shots}",
            pool.len()
        )));
    }
    pool.shuffle(&mut rng);
    if shuffle {
        // a monochrome demo draw cannot be counterfactually relabeled;
        // redraw until the selection carries at least two distinct answers
        if n_shots < 2 || pool.windows(2).all(|w| w[0].yc == w[1].yc) {
            return Err(IvLabError::InvalidArgument(
                "cannot shuffle labels: need >= 2 demos with distinct answers".into(),
            ));
        }
        while pool[..n_shots].windows(2).all(|w| w[0].yc == w[1].yc) {
            pool.shuffle(&mut rng);
        }
    }
    let demos: Vec<ExampleQuad> = pool[..n_shots].iter().map(|d| (*d).clone()).collect();

    let mut permutation: Vec<usize> = (0..n_shots).collect();
    if shuffle {
        loop {
            permutation.shuffle(&mut rng);
            let moved = permutation
                .iter()
                .enumerate()
                .any(|(i, &p)| demos[i].yc != demos[p].yc);
            if moved {
                break;
            }
        }
    }

    let mut tokens = vec![world.layout.bos];
    for (i, d) in demos.iter().enumerate() {
        tokens.extend_from_slice(&d.c);
        tokens.extend_from_slice(&d.x);
        tokens.push(world.layout.arrow);
        tokens.extend_from_slice(&demos[permutation[i]].yc);
        tokens.push(world.layout.sep);
    }
    tokens.extend_from_slice(&query.c);
    tokens.extend_from_slice(&query.x);
    tokens.push(world.layout.arrow);

    Ok(ICLPrompt {
        last_prompt_token: tokens.len() - 1,
        tokens,
        answer: query.yc.clone(),
        query: query.clone(),
        demos,
        shuffled: shuffle,
        permutation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::task::{make_examples, Split, TaskFamily, TaskSpec};
    use crate::tasks::world::{build_world, WorldSizes};

    fn setup() -> (World, TaskSpec, Vec<ExampleQuad>, ExampleQuad) {
        let w = build_world(9, &WorldSizes::default()).unwrap();
        let t = TaskSpec {
            id: "t".into(),
            family: TaskFamily::ListLast,
            instruction: vec![w.layout.fresh_instr.start],
            relation: 0,
            seed: 1,
        };
        let pool = make_examples(&w, &t, 40, Split::DemoPool).unwrap();
        let query = make_examples(&w, &t, 1, Split::Test).unwrap().remove(0);
        (w, t, pool, query)
    }

    #[test]
    fn zero_shots_and_demos_agree_on_format() {
        let (w, _, pool, query) = setup();
        let p = build_icl_prompt(&w, 0, &query, &pool, false, 3).unwrap();
        assert_eq!(p.tokens, render_zero_shot(&w, &query));
        assert_eq!(p.last_prompt_token, p.tokens.len() - 1);

        let p10 = build_icl_prompt(&w, 10, &query, &pool, false, 3).unwrap();
        assert_eq!(p10.demos.len(), 10);
        assert!(p10.demos.iter().all(|d| d.x != query.x));
        // prompt ends with the query's zero-shot rendering minus BOS
        let tail = &render_zero_shot(&w, &query)[1..];
        assert_eq!(&p10.tokens[p10.tokens.len() - tail.len()..], tail);
    }

    #[test]
    fn shuffle_moves_at_least_one_label() {
        let (w, _, pool, query) = setup();
        let p = build_icl_prompt(&w, 10, &query, &pool, true, 7).unwrap();
        let moved = p
            .permutation
            .iter()
            .enumerate()
            .any(|(i, &k)| p.demos[i].yc != p.demos[k].yc);
        assert!(moved);
        // demo slots in the token stream carry the permuted answers
        let clean = build_icl_prompt(&w, 10, &query, &pool, false, 7).unwrap();
        assert_ne!(p.tokens, clean.tokens);
        assert_eq!(p.demos, clean.demos);
    }

    #[test]
    fn deterministic_and_pool_checked() {
        let (w, _, pool, query) = setup();
        let a = build_icl_prompt(&w, 10, &query, &pool, true, 11).unwrap();
        let b = build_icl_prompt(&w, 10, &query, &pool, true, 11).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            build_icl_prompt(&w, 1000, &query, &pool, false, 0),
            Err(IvLabError::PoolExhausted(_))
        ));
    }
}
