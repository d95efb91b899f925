use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};

/// Decoder-only transformer configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_mlp: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    /// Positional encoding scheme; only learned absolute positions for now.
    #[serde(default)]
    pub positional: PositionalScheme,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PositionalScheme {
    #[default]
    LearnedAbsolute,
}

impl Default for ModelConfig {
    /// Large enough to develop in-context learning on the synthetic tasks,
    /// small enough for minutes-scale causal-effect scans.
    fn default() -> Self {
        ModelConfig {
            n_layers: 8,
            n_heads: 8,
            d_model: 128,
            d_head: 16,
            d_mlp: 512,
            vocab_size: 512,
            max_context: 256,
            positional: PositionalScheme::LearnedAbsolute,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads * self.d_head != self.d_model {
            return Err(IvLabError::Config(format!(
                "n_heads * d_head = {} does not equal d_model = {}",
                self.n_heads * self.d_head,
                self.d_model
            )));
        }
        if self.n_layers == 0 || self.vocab_size == 0 || self.max_context == 0 {
            return Err(IvLabError::Config(
                "layer count, vocab size and context length must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Index pair naming one attention head. Serialized as the compact string
/// `"l{layer}h{head}"` so it can key JSON maps (CE maps, IV constituents).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct HeadLocation {
    pub layer: usize,
    pub head: usize,
}

impl HeadLocation {
    pub fn new(layer: usize, head: usize) -> Self {
        HeadLocation { layer, head }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.layer >= cfg.n_layers || self.head >= cfg.n_heads {
            return Err(IvLabError::InterventionOutOfRange(format!(
                "head ({}, {}) outside {}x{} model",
                self.layer, self.head, cfg.n_layers, cfg.n_heads
            )));
        }
        Ok(())
    }
}

impl Serialize for HeadLocation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("l{}h{}", self.layer, self.head))
    }
}

impl<'de> Deserialize<'de> for HeadLocation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let parse = || -> Option<HeadLocation> {
            let rest = text.strip_prefix('l')?;
            let (layer, head) = rest.split_once('h')?;
            Some(HeadLocation {
                layer: layer.parse().ok()?,
                head: head.parse().ok()?,
            })
        };
        parse().ok_or_else(|| {
            serde::de::Error::custom(format!("expected \"l<layer>h<head>\", got {text:?}"))
        })
    }
}

/// All heads of a config in (layer, head) ascending order.
pub fn all_heads(cfg: &ModelConfig) -> Vec<HeadLocation> {
    let mut out = Vec::with_capacity(cfg.n_layers * cfg.n_heads);
    for layer in 0..cfg.n_layers {
        for head in 0..cfg.n_heads {
            out.push(HeadLocation { layer, head });
        }
    }
    out
}
