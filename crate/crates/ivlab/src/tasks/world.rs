//! Synthetic token world: a fixed vocabulary layout plus random fact tables
//! mapping entities to attributes (one bijection per relation).

use std::collections::BTreeMap;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};

/// How many tokens each region of the vocabulary gets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSizes {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_options: usize,
    pub n_base_instr: usize,
    pub n_fresh_instr: usize,
    pub n_burst_instr: usize,
    /// Index markers labelling list slots (`m0 e0 m1 e1 ...`), so position
    /// selection can be content-addressed rather than offset-addressed.
    pub n_markers: usize,
    pub vocab_size: usize,
}

impl Default for WorldSizes {
    fn default() -> Self {
        WorldSizes {
            n_entities: 48,
            n_relations: 2,
            n_options: 4,
            n_base_instr: 8,
            n_fresh_instr: 8,
            n_burst_instr: 16,
            n_markers: 3,
            vocab_size: 256,
        }
    }
}

/// Token-id ranges carved out of the vocabulary. All ranges are disjoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenLayout {
    pub pad: usize,
    pub bos: usize,
    pub sep: usize,
    pub arrow: usize,
    pub options: Range<usize>,
    pub relations: Range<usize>,
    pub entities: Range<usize>,
    /// One attribute range per relation.
    pub attributes: Vec<Range<usize>>,
    pub base_instr: Range<usize>,
    pub fresh_instr: Range<usize>,
    pub burst_instr: Range<usize>,
    pub markers: Range<usize>,
    pub vocab_size: usize,
}

impl TokenLayout {
    fn build(sizes: &WorldSizes) -> Result<TokenLayout> {
        let mut next = 0usize;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let pad = take(1).start;
        let bos = take(1).start;
        let sep = take(1).start;
        let arrow = take(1).start;
        let options = take(sizes.n_options);
        let relations = take(sizes.n_relations);
        let entities = take(sizes.n_entities);
        let attributes: Vec<Range<usize>> = (0..sizes.n_relations)
            .map(|_| take(sizes.n_entities))
            .collect();
        let base_instr = take(sizes.n_base_instr);
        let fresh_instr = take(sizes.n_fresh_instr);
        let burst_instr = take(sizes.n_burst_instr);
        let markers = take(sizes.n_markers);
        if next > sizes.vocab_size {
            return Err(IvLabError::VocabOverflow(format!(
                "layout needs {next} tokens but vocab_size is {}",
                sizes.vocab_size
            )));
        }
        Ok(TokenLayout {
            pad,
            bos,
            sep,
            arrow,
            options,
            relations,
            entities,
            attributes,
            base_instr,
            fresh_instr,
            burst_instr,
            markers,
            vocab_size: sizes.vocab_size,
        })
    }
}

/// Random bijection entity-token -> attribute-token for one relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactTable {
    pub relation: usize,
    pub map: BTreeMap<usize, usize>,
    pub seed: u64,
}

impl FactTable {
    pub fn inverse(&self) -> BTreeMap<usize, usize> {
        self.map.iter().map(|(&e, &a)| (a, e)).collect()
    }
}

/// The full synthetic world: layout plus one fact table per relation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub sizes: WorldSizes,
    pub layout: TokenLayout,
    pub facts: Vec<FactTable>,
    pub seed: u64,
}

pub fn build_world(seed: u64, sizes: &WorldSizes) -> Result<World> {
    let layout = TokenLayout::build(sizes)?;
    let mut facts = Vec::with_capacity(sizes.n_relations);
    for rel in 0..sizes.n_relations {
        let table_seed = seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(rel as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(table_seed);
        let mut attrs: Vec<usize> = layout.attributes[rel].clone().collect();
        attrs.shuffle(&mut rng);
        let map = layout.entities.clone().zip(attrs).collect();
        facts.push(FactTable {
            relation: rel,
            map,
            seed: table_seed,
        });
    }
    Ok(World {
        sizes: sizes.clone(),
        layout,
        facts,
        seed,
    })
}

impl World {
    /// Attribute token for `entity` under relation `rel`.
    pub fn fact(&self, rel: usize, entity: usize) -> usize {
        self.facts[rel].map[&entity]
    }

    pub fn relation_token(&self, rel: usize) -> usize {
        self.layout.relations.start + rel
    }

    pub fn option_token(&self, i: usize) -> usize {
        self.layout.options.start + i
    }

    pub fn marker_token(&self, i: usize) -> usize {
        self.layout.markers.start + i
    }

    /// Canonical label map: attribute token -> option letter by index class.
    pub fn label_of_attr(&self, rel: usize, attr: usize) -> usize {
        let idx = attr - self.layout.attributes[rel].start;
        self.option_token(idx % self.sizes.n_options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_world() {
        let sizes = WorldSizes::default();
        let a = build_world(11, &sizes).unwrap();
        let b = build_world(11, &sizes).unwrap();
        assert_eq!(a, b);
        let c = build_world(12, &sizes).unwrap();
        assert_ne!(a.facts, c.facts);
    }

    #[test]
    fn overflow_rejected() {
        let sizes = WorldSizes {
            vocab_size: 32,
            ..Default::default()
        };
        assert!(matches!(
            build_world(0, &sizes),
            Err(IvLabError::VocabOverflow(_))
        ));
    }

    #[test]
    fn fact_tables_are_bijections() {
        let w = build_world(3, &WorldSizes::default()).unwrap();
        for t in &w.facts {
            let inv = t.inverse();
            assert_eq!(inv.len(), t.map.len());
            for (&e, &a) in &t.map {
                assert!(w.layout.attributes[t.relation].contains(&a));
                assert_eq!(inv[&a], e);
            }
        }
    }

    #[test]
    fn ranges_are_disjoint() {
        let w = build_world(0, &WorldSizes::default()).unwrap();
        let l = &w.layout;
        let mut seen = vec![0u32; l.vocab_size];
        let mut mark = |r: Range<usize>| {
            for t in r {
                seen[t] += 1;
            }
        };
        mark(l.pad..l.pad + 1);
        mark(l.bos..l.bos + 1);
        mark(l.sep..l.sep + 1);
        mark(l.arrow..l.arrow + 1);
        mark(l.options.clone());
        mark(l.relations.clone());
        mark(l.entities.clone());
        for r in &l.attributes {
            mark(r.clone());
        }
        mark(l.base_instr.clone());
        mark(l.fresh_instr.clone());
        mark(l.burst_instr.clone());
        mark(l.markers.clone());
        assert!(seen.iter().all(|&n| n <= 1));
    }
}
