use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::model::config::{HeadLocation, ModelConfig};
use crate::numerics::Tensor;

/// Token positions an edit applies to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PositionSelector {
    Explicit(Vec<usize>),
    /// Resolved against the prompt length at forward time.
    LastPromptToken,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Edit {
    /// Substitute the head's residual-stream contribution at the selected
    /// positions with the given d_model vector.
    HeadReplace {
        loc: HeadLocation,
        vector: Tensor,
        positions: PositionSelector,
    },
    /// Add `scale * vector` to the post-attention residual stream of the
    /// given layer at the selected positions.
    ResidualAdd {
        layer: usize,
        vector: Tensor,
        scale: f64,
        positions: PositionSelector,
    },
}

/// A set of residual-stream edits applied during one forward pass.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct InterventionSpec {
    pub edits: Vec<Edit>,
}

impl InterventionSpec {
    pub fn head_replace(loc: HeadLocation, vector: Tensor, positions: PositionSelector) -> Self {
        InterventionSpec {
            edits: vec![Edit::HeadReplace {
                loc,
                vector,
                positions,
            }],
        }
    }

    pub fn residual_add(
        layer: usize,
        vector: Tensor,
        scale: f64,
        positions: PositionSelector,
    ) -> Self {
        InterventionSpec {
            edits: vec![Edit::ResidualAdd {
                layer,
                vector,
                scale,
                positions,
            }],
        }
    }

    pub fn merge(mut self, other: InterventionSpec) -> Self {
        self.edits.extend(other.edits);
        self
    }

    /// Resolve symbolic position selectors and validate every target.
    pub fn resolve(
        &self,
        cfg: &ModelConfig,
        seq_len: usize,
        last_prompt_token: usize,
    ) -> Result<ResolvedIntervention> {
        if last_prompt_token >= seq_len {
            return Err(IvLabError::InterventionOutOfRange(format!(
                "last prompt token {last_prompt_token} outside sequence of length {seq_len}"
            )));
        }
        let mut head_replace: BTreeMap<HeadLocation, Vec<(Vec<usize>, Tensor)>> = BTreeMap::new();
        let mut residual_add: BTreeMap<usize, Vec<(Vec<usize>, Tensor, f64)>> = BTreeMap::new();
        for edit in &self.edits {
            match edit {
                Edit::HeadReplace {
                    loc,
                    vector,
                    positions,
                } => {
                    loc.validate(cfg)?;
                    check_vector(vector, cfg)?;
                    let pos = resolve_positions(positions, seq_len, last_prompt_token)?;
                    head_replace
                        .entry(*loc)
                        .or_default()
                        .push((pos, vector.clone()));
                }
                Edit::ResidualAdd {
                    layer,
                    vector,
                    scale,
                    positions,
                } => {
                    if *layer >= cfg.n_layers {
                        return Err(IvLabError::InterventionOutOfRange(format!(
                            "layer {layer} outside {} layers",
                            cfg.n_layers
                        )));
                    }
                    if *scale < 0.0 {
                        return Err(IvLabError::InvalidArgument(
                            "intervention scale must be non-negative".into(),
                        ));
                    }
                    check_vector(vector, cfg)?;
                    let pos = resolve_positions(positions, seq_len, last_prompt_token)?;
                    residual_add
                        .entry(*layer)
                        .or_default()
                        .push((pos, vector.clone(), *scale));
                }
            }
        }
        Ok(ResolvedIntervention {
            head_replace,
            residual_add,
        })
    }
}

fn check_vector(v: &Tensor, cfg: &ModelConfig) -> Result<()> {
    if v.len() != cfg.d_model {
        return Err(IvLabError::ShapeMismatch(format!(
            "edit vector length {} does not match d_model {}",
            v.len(),
            cfg.d_model
        )));
    }
    v.assert_finite("intervention vector")
}

fn resolve_positions(
    sel: &PositionSelector,
    seq_len: usize,
    last_prompt_token: usize,
) -> Result<Vec<usize>> {
    match sel {
        PositionSelector::LastPromptToken => Ok(vec![last_prompt_token]),
        PositionSelector::Explicit(ps) => {
            for &p in ps {
                if p >= seq_len {
                    return Err(IvLabError::InterventionOutOfRange(format!(
                        "position {p} outside sequence of length {seq_len}"
                    )));
                }
            }
            Ok(ps.clone())
        }
    }
}

/// Edits with validated targets and concrete positions, grouped by site.
#[derive(Clone, Debug, Default)]
pub struct ResolvedIntervention {
    pub head_replace: BTreeMap<HeadLocation, Vec<(Vec<usize>, Tensor)>>,
    pub residual_add: BTreeMap<usize, Vec<(Vec<usize>, Tensor, f64)>>,
}

/// Per-head residual-stream contributions captured during a forward pass,
/// before any intervention applies at the recorded site.
#[derive(Clone, Debug, Default)]
pub struct ActivationRecord {
    /// (head, token position) -> contribution vector of length d_model.
    map: BTreeMap<(HeadLocation, usize), Vec<f64>>,
}

impl ActivationRecord {
    pub fn insert(&mut self, loc: HeadLocation, pos: usize, v: Vec<f64>) {
        self.map.insert((loc, pos), v);
    }

    pub fn get(&self, loc: HeadLocation, pos: usize) -> Option<&[f64]> {
        self.map.get(&(loc, pos)).map(|v| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(HeadLocation, usize), &Vec<f64>)> {
        self.map.iter()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
