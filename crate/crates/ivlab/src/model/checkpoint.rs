//! Self-describing checkpoint container.
//!
//! Layout (all integers little-endian):
//!   bytes 0..8    magic `IVLABCK1`
//!   bytes 8..16   u64 header length in bytes
//!   header        JSON: config, adapter stack, precision, RNG state,
//!                 and an ordered parameter manifest (name, shape, trainable)
//!   payload       raw f64 bits for each parameter, manifest order
//!
//! Round-trips are bit-exact: values are written as raw IEEE-754 bits.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{IvLabError, Result};
use crate::model::config::ModelConfig;
use crate::model::transformer::{AdapterMeta, Model};
use crate::numerics::{ParamSet, Precision, Tensor};

const MAGIC: &[u8; 8] = b"IVLABCK1";

/// Position of a counter-based RNG, enough to resume a deterministic run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub word_pos: u128,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    adapters: Vec<AdapterMeta>,
    precision: Precision,
    rng: Option<RngState>,
    /// Free-form provenance (config hash, run seed, ...). Sorted keys keep
    /// the serialized header deterministic.
    #[serde(default)]
    meta: BTreeMap<String, String>,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

pub fn save(model: &Model, rng: Option<&RngState>, path: &Path) -> Result<()> {
    save_with_meta(model, rng, &BTreeMap::new(), path)
}

pub fn save_with_meta(
    model: &Model,
    rng: Option<&RngState>,
    meta: &BTreeMap<String, String>,
    path: &Path,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let header = Header {
        config: model.config.clone(),
        adapters: model.adapters.clone(),
        precision: model.precision,
        rng: rng.cloned(),
        meta: meta.clone(),
        params: model
            .params
            .iter()
            .map(|(_, p)| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, p) in model.params.iter() {
        for v in p.value.data() {
            w.write_all(&v.to_bits().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read only the provenance map from a checkpoint header.
pub fn read_meta(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IvLabError::Checkpoint(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    Ok(header.meta)
}

pub fn load(path: &Path) -> Result<(Model, Option<RngState>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IvLabError::Checkpoint(format!(
            "bad magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    r.read_exact(&mut len_bytes)?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: Header = serde_json::from_slice(&header_bytes)?;
    header.config.validate()?;

    let mut params = ParamSet::new();
    for entry in &header.params {
        let n: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_bits(u64::from_le_bytes(buf)));
        }
        let id = params.add(&entry.name, Tensor::from_vec(&entry.shape, data)?);
        params.set_trainable(id, entry.trainable);
    }
    let model = Model {
        config: header.config,
        params,
        adapters: header.adapters,
        precision: header.precision,
    };
    Ok((model, header.rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let cfg = ModelConfig {
            n_layers: 2,
            n_heads: 2,
            d_model: 8,
            d_head: 4,
            d_mlp: 16,
            vocab_size: 11,
            max_context: 12,
            seed: 7,
            ..Default::default()
        };
        let mut model = Model::new(cfg).unwrap();
        model.add_adapter("task0", 2, 4.0, 99);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let rng = RngState {
            seed: 7,
            word_pos: 1234,
        };
        save(&model, Some(&rng), &path).unwrap();
        let (loaded, rng2) = load(&path).unwrap();
        assert_eq!(rng2, Some(rng));
        assert_eq!(loaded.fingerprint(), model.fingerprint());
        assert_eq!(loaded.adapters.len(), 1);
        // rewrite must produce identical bytes
        let path2 = dir.path().join("m2.ckpt");
        save(&loaded, rng2.as_ref(), &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTMAGIC........").unwrap();
        assert!(matches!(load(&path), Err(IvLabError::Checkpoint(_))));
    }
}
