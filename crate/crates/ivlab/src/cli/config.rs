//! Versioned TOML run configuration. Unknown keys are rejected everywhere;
//! every section has defaults so a minimal config is just `version = 1`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::model::ModelConfig;
use crate::tasks::{task::fnv64, PretrainMix, WorldSizes};
use crate::train::{EvalConfig, FinetuneConfig, IvExtractConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Seed for the fact tables; fixed per experiment so every command and
    /// every run seed sees the same world.
    pub seed: u64,
    pub sizes: WorldSizes,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 9,
            sizes: WorldSizes::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub n_sequences: usize,
    pub max_seq_len: usize,
    pub mix: PretrainMix,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 2000,
            lr: 1e-3,
            batch_size: 8,
            n_sequences: 4000,
            max_seq_len: 96,
            mix: PretrainMix::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractConfig {
    /// Extraction sampling knobs, under `[extract.iv]`.
    pub iv: IvExtractConfig,
    /// Minimum 10-shot accuracy before a task's IV may be extracted.
    pub gate_min_icl: f64,
    /// Task ids to extract; empty means the benchmark's continual tasks.
    pub tasks: Vec<String>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            iv: IvExtractConfig::default(),
            gate_min_icl: 0.8,
            tasks: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Pretrained checkpoint consumed by extract/finetune/evaluate.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default = "default_benchmark")]
    pub benchmark: String,
    #[serde(default)]
    pub world: WorldConfig,
    /// When the section is omitted entirely, the vocab is aligned with the
    /// default world; a partial `[model]` section must set it explicitly.
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub pretrain: PretrainConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub finetune: FinetuneConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn default_benchmark() -> String {
    "toy4".into()
}

fn default_model() -> ModelConfig {
    ModelConfig {
        vocab_size: WorldSizes::default().vocab_size,
        ..ModelConfig::default()
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| IvLabError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig =
            toml::from_str(&text).map_err(|e| IvLabError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(IvLabError::Config(format!(
                "config version {} unsupported (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.model.validate()?;
        if self.model.vocab_size != self.world.sizes.vocab_size {
            return Err(IvLabError::Config(format!(
                "model vocab_size {} does not match world vocab_size {}",
                self.model.vocab_size, self.world.sizes.vocab_size
            )));
        }
        self.pretrain.mix.validate()?;
        Ok(())
    }

    /// Stable hash of the full config, embedded in every artifact.
    pub fn hash(&self) -> Result<String> {
        Ok(format!("{:016x}", fnv64(serde_json::to_vec(self)?)))
    }
}
