//! Task specifications and example generation.
//!
//! Every task produces `ExampleQuad`s carrying both evaluation forms:
//! knowledge form is the bare continuation x -> y, instruction form is the
//! instructed transformation (c, x) -> y^c.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::tasks::world::World;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    ListFirst,
    ListMid,
    ListLast,
    FactLookupMc,
    PairMap,
    ComposedFirst,
    ComposedMid,
    ComposedLast,
}

impl TaskFamily {
    /// Position this family selects on the 3-entity list surface, if any.
    /// The surface is shared by all three list rules, so the rule cannot be
    /// read off the input alone.
    pub fn list_pos(self) -> Option<usize> {
        match self {
            TaskFamily::ListFirst => Some(0),
            TaskFamily::ListMid => Some(1),
            TaskFamily::ListLast => Some(2),
            _ => None,
        }
    }

    /// Position this family selects on the rel + 3-entity composed surface.
    pub fn composed_pos(self) -> Option<usize> {
        match self {
            TaskFamily::ComposedFirst => Some(0),
            TaskFamily::ComposedMid => Some(1),
            TaskFamily::ComposedLast => Some(2),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    DemoPool,
    Train,
    Val,
    Test,
}

/// One toy task: a family rule bound to an instruction token sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    pub family: TaskFamily,
    pub instruction: Vec<usize>,
    pub relation: usize,
    pub seed: u64,
}

/// The paper-style tuple (x, y, c, y^c).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExampleQuad {
    pub x: Vec<usize>,
    pub y: Vec<usize>,
    pub c: Vec<usize>,
    pub yc: Vec<usize>,
}

/// Distinct examples a task can draw before pools are considered exhausted.
const POOL_TARGET: usize = 2000;

// Split segments as fractions of the generated pool, in fixed order.
const SPLIT_FRACTIONS: [(Split, f64); 4] = [
    (Split::DemoPool, 0.25),
    (Split::Train, 0.45),
    (Split::Val, 0.10),
    (Split::Test, 0.20),
];

pub(crate) fn fnv64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn hash_tokens(tokens: &[usize]) -> u64 {
    fnv64(tokens.iter().flat_map(|&t| (t as u64).to_le_bytes()))
}

impl TaskSpec {
    fn pool_seed(&self, world: &World) -> u64 {
        fnv64(
            self.id
                .bytes()
                .chain(self.seed.to_le_bytes())
                .chain(world.seed.to_le_bytes()),
        )
    }

    /// Sample one quad. Deduplication and splitting happen in the pool.
    fn sample(&self, world: &World, rng: &mut ChaCha8Rng) -> ExampleQuad {
        let l = &world.layout;
        let rel_tok = world.relation_token(self.relation);
        let pick_entities = |rng: &mut ChaCha8Rng, n: usize| -> Vec<usize> {
            let mut pool: Vec<usize> = l.entities.clone().collect();
            pool.shuffle(rng);
            pool.truncate(n);
            pool
        };
        // Slot-marker interleaving `m0 e0 m1 e1 m2 e2`: selecting slot p is
        // then a content-addressed lookup on the marker token.
        let with_markers = |es: &[usize]| -> Vec<usize> {
            es.iter()
                .enumerate()
                .flat_map(|(i, &e)| [world.marker_token(i), e])
                .collect()
        };
        let (x, y, yc) = match self.family {
            TaskFamily::ListFirst | TaskFamily::ListMid | TaskFamily::ListLast => {
                let p = self.family.list_pos().unwrap();
                let es = pick_entities(rng, 3);
                let t = es[p];
                (with_markers(&es), vec![t], vec![t])
            }
            TaskFamily::FactLookupMc => {
                let e = pick_entities(rng, 1)[0];
                let truth = world.fact(self.relation, e);
                let mut attrs: Vec<usize> = l.attributes[self.relation]
                    .clone()
                    .filter(|&a| a != truth)
                    .collect();
                attrs.shuffle(rng);
                let mut listed = vec![truth, attrs[0], attrs[1], attrs[2]];
                listed.shuffle(rng);
                let slot = listed.iter().position(|&a| a == truth).unwrap();
                let mut x = vec![rel_tok, e];
                for (i, &a) in listed.iter().enumerate() {
                    x.push(world.option_token(i));
                    x.push(a);
                }
                (x, vec![truth], vec![world.option_token(slot)])
            }
            TaskFamily::PairMap => {
                let es = pick_entities(rng, 2);
                let truth = world.fact(self.relation, es[0]);
                let x = vec![rel_tok, es[0], es[1]];
                (x, vec![truth], vec![world.label_of_attr(self.relation, truth)])
            }
            TaskFamily::ComposedFirst | TaskFamily::ComposedMid | TaskFamily::ComposedLast => {
                let p = self.family.composed_pos().unwrap();
                let es = pick_entities(rng, 3);
                let truth = world.fact(self.relation, es[p]);
                let mut x = vec![rel_tok];
                x.extend(with_markers(&es));
                (x, vec![truth], vec![world.label_of_attr(self.relation, truth)])
            }
        };
        ExampleQuad {
            x,
            y,
            c: self.instruction.clone(),
            yc,
        }
    }

    /// Full deterministic example pool, deduplicated by x.
    fn pool(&self, world: &World) -> Vec<ExampleQuad> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.pool_seed(world));
        let mut seen = BTreeSet::new();
        let mut pool = Vec::new();
        for _ in 0..POOL_TARGET * 8 {
            if pool.len() >= POOL_TARGET {
                break;
            }
            let q = self.sample(world, &mut rng);
            if seen.insert(q.x.clone()) {
                pool.push(q);
            }
        }
        pool
    }

    /// Recompute (y, y^c) from x alone; the independent rule oracle.
    pub fn rule_eval(&self, world: &World, x: &[usize]) -> (Vec<usize>, Vec<usize>) {
        match self.family {
            TaskFamily::ListFirst | TaskFamily::ListMid | TaskFamily::ListLast => {
                let p = self.family.list_pos().unwrap();
                let e = x[2 * p + 1];
                (vec![e], vec![e])
            }
            TaskFamily::FactLookupMc => {
                let truth = world.fact(self.relation, x[1]);
                let slot = (0..world.sizes.n_options)
                    .position(|i| x[3 + 2 * i] == truth)
                    .expect("true attribute listed among options");
                (vec![truth], vec![world.option_token(slot)])
            }
            TaskFamily::PairMap => {
                let truth = world.fact(self.relation, x[1]);
                (vec![truth], vec![world.label_of_attr(self.relation, truth)])
            }
            TaskFamily::ComposedFirst | TaskFamily::ComposedMid | TaskFamily::ComposedLast => {
                let p = self.family.composed_pos().unwrap();
                let truth = world.fact(self.relation, x[2 * p + 2]);
                (vec![truth], vec![world.label_of_attr(self.relation, truth)])
            }
        }
    }

    /// Instruction-form answer candidates for rank classification; always
    /// contains the true y^c.
    pub fn candidates(&self, world: &World, quad: &ExampleQuad) -> Vec<Vec<usize>> {
        match self.family {
            TaskFamily::ListFirst | TaskFamily::ListMid | TaskFamily::ListLast => (0..3)
                .map(|p| vec![quad.x[2 * p + 1]])
                .collect(),
            _ => (0..world.sizes.n_options)
                .map(|i| vec![world.option_token(i)])
                .collect(),
        }
    }

    /// Knowledge-form answer candidates; always contains the true y.
    pub fn knowledge_candidates(&self, world: &World, quad: &ExampleQuad) -> Vec<Vec<usize>> {
        match self.family {
            TaskFamily::ListFirst | TaskFamily::ListMid | TaskFamily::ListLast => (0..3)
                .map(|p| vec![quad.x[2 * p + 1]])
                .collect(),
            TaskFamily::FactLookupMc => (0..world.sizes.n_options)
                .map(|i| vec![quad.x[3 + 2 * i]])
                .collect(),
            TaskFamily::PairMap => {
                // True attribute plus deterministic distractors seeded on x.
                let mut rng = ChaCha8Rng::seed_from_u64(hash_tokens(&quad.x));
                let truth = quad.y[0];
                let mut attrs: Vec<usize> = world.layout.attributes[self.relation]
                    .clone()
                    .filter(|&a| a != truth)
                    .collect();
                attrs.shuffle(&mut rng);
                let mut cands = vec![truth, attrs[0], attrs[1], attrs[2]];
                cands.shuffle(&mut rng);
                cands.into_iter().map(|a| vec![a]).collect()
            }
            TaskFamily::ComposedFirst | TaskFamily::ComposedMid | TaskFamily::ComposedLast => {
                // Facts of all three listed entities plus one seeded
                // distractor, so every candidate is plausible a priori.
                let mut rng = ChaCha8Rng::seed_from_u64(hash_tokens(&quad.x));
                let listed: Vec<usize> = (0..3)
                    .map(|i| world.fact(self.relation, quad.x[2 * i + 2]))
                    .collect();
                let mut attrs: Vec<usize> = world.layout.attributes[self.relation]
                    .clone()
                    .filter(|&a| !listed.contains(&a))
                    .collect();
                attrs.shuffle(&mut rng);
                let mut cands = listed;
                cands.push(attrs[0]);
                cands.shuffle(&mut rng);
                cands.into_iter().map(|a| vec![a]).collect()
            }
        }
    }
}

/// Draw `n` quads from the given split of the task's deterministic pool.
/// Splits are disjoint segments of one shuffled pool.
pub fn make_examples(
    world: &World,
    task: &TaskSpec,
    n: usize,
    split: Split,
) -> Result<Vec<ExampleQuad>> {
    let pool = task.pool(world);
    let mut start = 0usize;
    for &(s, frac) in &SPLIT_FRACTIONS {
        let len = (pool.len() as f64 * frac).floor() as usize;
        if s == split {
            let segment = &pool[start..start + len];
            if n > segment.len() {
                return Err(IvLabError::PoolExhausted(format!(
                    "{}: requested {n} from {:?} split of {}",
                    task.id,
                    split,
                    segment.len()
                )));
            }
            return Ok(segment[..n].to_vec());
        }
        start += len;
    }
    unreachable!("split covered by SPLIT_FRACTIONS");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::world::{build_world, WorldSizes};

    fn world() -> World {
        build_world(5, &WorldSizes::default()).unwrap()
    }

    fn spec(family: TaskFamily) -> TaskSpec {
        TaskSpec {
            id: format!("{family:?}"),
            family,
            instruction: vec![100],
            relation: 0,
            seed: 17,
        }
    }

    const FAMILIES: [TaskFamily; 8] = [
        TaskFamily::ListFirst,
        TaskFamily::ListMid,
        TaskFamily::ListLast,
        TaskFamily::FactLookupMc,
        TaskFamily::PairMap,
        TaskFamily::ComposedFirst,
        TaskFamily::ComposedMid,
        TaskFamily::ComposedLast,
    ];

    #[test]
    fn rule_soundness_over_every_emitted_quad() {
        let w = world();
        for fam in FAMILIES {
            let t = spec(fam);
            for split in [Split::DemoPool, Split::Train, Split::Val, Split::Test] {
                for q in make_examples(&w, &t, 40, split).unwrap() {
                    let (y, yc) = t.rule_eval(&w, &q.x);
                    assert_eq!(q.y, y, "{fam:?} knowledge rule");
                    assert_eq!(q.yc, yc, "{fam:?} instruction rule");
                    assert!(t.candidates(&w, &q).contains(&q.yc));
                    assert!(t.knowledge_candidates(&w, &q).contains(&q.y));
                }
            }
        }
    }

    #[test]
    fn splits_are_disjoint() {
        let w = world();
        for fam in FAMILIES {
            let t = spec(fam);
            let mut seen = BTreeSet::new();
            for split in [Split::DemoPool, Split::Train, Split::Val, Split::Test] {
                for q in make_examples(&w, &t, 60, split).unwrap() {
                    assert!(seen.insert(q.x.clone()), "{fam:?} split overlap");
                }
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let w = world();
        let t = spec(TaskFamily::ComposedLast);
        let a = make_examples(&w, &t, 25, Split::Train).unwrap();
        let b = make_examples(&w, &t, 25, Split::Train).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exhausted_pool_errors() {
        let w = world();
        let t = spec(TaskFamily::PairMap);
        assert!(matches!(
            make_examples(&w, &t, 100_000, Split::Val),
            Err(IvLabError::PoolExhausted(_))
        ));
    }

    #[test]
    fn lookup_options_contain_exactly_one_truth() {
        let w = world();
        let t = spec(TaskFamily::FactLookupMc);
        for q in make_examples(&w, &t, 50, Split::Test).unwrap() {
            let truth = w.fact(0, q.x[1]);
            let hits = (0..4).filter(|&i| q.x[3 + 2 * i] == truth).count();
            assert_eq!(hits, 1);
        }
    }
}
