//! Versioned binary checkpoint container.
//!
//! Layout: 4-byte magic, u32 format version (LE), u64 header length
//! (LE), JSON header, then raw little-endian fp64 blocks in the order the
//! header declares. Saving a loaded checkpoint reproduces the file byte
//! for byte.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::HeadTable;
use crate::model::{Model, ModelConfig};
use crate::params::ParamSet;
use crate::rng::fnv64;
use crate::scheduler::OptimizerState;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PTCK";
pub const FORMAT_VERSION: u32 = 1;

/// Model + optimizer state + provenance, ready to persist.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub step: u64,
    pub seed: u64,
    /// Tags of the seed streams that produced this state.
    pub seed_lineage: Vec<String>,
}

/// Stable fingerprint of a model configuration.
pub fn config_digest(config: &ModelConfig) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    format!("{:016x}", fnv64(canonical.as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the data section, in f64 units.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHyper {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config_digest: String,
    step: u64,
    seed: u64,
    seed_lineage: Vec<String>,
    model_config: ModelConfig,
    heads: HeadTable,
    optimizer: OptimizerHyper,
    params: Vec<BlockEntry>,
    moments_m: Vec<BlockEntry>,
    moments_v: Vec<BlockEntry>,
}

impl Checkpoint {
    pub fn new(model: Model, optimizer: OptimizerState, step: u64, seed: u64) -> Self {
        Checkpoint { model, optimizer, step, seed, seed_lineage: Vec::new() }
    }

    pub fn with_lineage(mut self, lineage: Vec<String>) -> Self {
        self.seed_lineage = lineage;
        self
    }

    pub fn digest(&self) -> String {
        config_digest(&self.model.config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut data: Vec<f64> = Vec::new();
        let mut declare = |tensors: Vec<(&String, &Tensor)>| -> Vec<BlockEntry> {
            tensors
                .into_iter()
                .map(|(name, t)| {
                    let entry = BlockEntry {
                        name: name.clone(),
                        shape: t.shape().to_vec(),
                        offset: data.len(),
                    };
                    data.extend_from_slice(t.values());
                    entry
                })
                .collect()
        };

        let params = declare(self.model.params.iter().collect());
        // Moments are stored densely over every parameter: zeros when the
        // optimizer never touched a key. Behavior is identical and the
        // round trip stays byte-stable.
        let zero_like: Vec<(String, Tensor)> = self
            .model
            .params
            .iter()
            .map(|(n, t)| {
                (n.clone(), Tensor::zeros(t.shape().to_vec()))
            })
            .collect();
        let m_dense: Vec<(String, Tensor)> = zero_like
            .iter()
            .map(|(n, z)| (n.clone(), self.optimizer.m.get(n).cloned().unwrap_or_else(|| z.clone())))
            .collect();
        let v_dense: Vec<(String, Tensor)> = zero_like
            .iter()
            .map(|(n, z)| (n.clone(), self.optimizer.v.get(n).cloned().unwrap_or_else(|| z.clone())))
            .collect();
        let moments_m = declare(m_dense.iter().map(|(n, t)| (n, t)).collect());
        let moments_v = declare(v_dense.iter().map(|(n, t)| (n, t)).collect());

        let header = Header {
            format_version: FORMAT_VERSION,
            config_digest: self.digest(),
            step: self.step,
            seed: self.seed,
            seed_lineage: self.seed_lineage.clone(),
            model_config: self.model.config.clone(),
            heads: self.model.heads.clone(),
            optimizer: OptimizerHyper {
                learning_rate: self.optimizer.learning_rate,
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                eps: self.optimizer.eps,
                step: self.optimizer.step,
            },
            params,
            moments_m,
            moments_v,
        };
        let header_json = serde_json::to_vec(&header)
            .map_err(|e| Error::Checkpoint(format!("header serialize: {e}")))?;

        let mut out = BufWriter::new(File::create(path.as_ref())?);
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(header_json.len() as u64).to_le_bytes())?;
        out.write_all(&header_json)?;
        for v in &data {
            out.write_all(&v.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint> {
        let mut reader = BufReader::new(File::open(path.as_ref())?);
        let mut magic = [0u8; 4];
        reader.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("bad magic {magic:?}")));
        }
        let mut word = [0u8; 4];
        reader.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} != supported {FORMAT_VERSION}"
            )));
        }
        let mut len_bytes = [0u8; 8];
        reader.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        reader.read_exact(&mut header_json)?;
        let header: Header = serde_json::from_slice(&header_json)
            .map_err(|e| Error::Checkpoint(format!("header parse: {e}")))?;

        if config_digest(&header.model_config) != header.config_digest {
            return Err(Error::Checkpoint(format!(
                "stored config digest {} does not match the embedded config",
                header.config_digest
            )));
        }

        let mut raw = Vec::new();
        reader.read_to_end(&mut raw)?;
        if raw.len() % 8 != 0 {
            return Err(Error::Checkpoint(format!("data section size {} not 8-aligned", raw.len())));
        }
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();

        let take = |entries: &[BlockEntry]| -> Result<Vec<(String, Tensor)>> {
            entries
                .iter()
                .map(|e| {
                    let numel: usize = e.shape.iter().product();
                    let end = e.offset + numel;
                    if end > data.len() {
                        return Err(Error::Checkpoint(format!(
                            "block '{}' spans {}..{end} beyond data length {}",
                            e.name,
                            e.offset,
                            data.len()
                        )));
                    }
                    Ok((e.name.clone(), Tensor::new(e.shape.clone(), data[e.offset..end].to_vec())?))
                })
                .collect()
        };

        let mut params = ParamSet::new();
        for (name, t) in take(&header.params)? {
            params.insert(name, t)?;
        }
        let model = Model { config: header.model_config, params, heads: header.heads };

        let mut optimizer = OptimizerState::with_hyper(
            header.optimizer.learning_rate,
            header.optimizer.beta1,
            header.optimizer.beta2,
            header.optimizer.eps,
        );
        optimizer.step = header.optimizer.step;
        optimizer.m = take(&header.moments_m)?.into_iter().collect();
        optimizer.v = take(&header.moments_v)?.into_iter().collect();

        Ok(Checkpoint {
            model,
            optimizer,
            step: header.step,
            seed: header.seed,
            seed_lineage: header.seed_lineage,
        })
    }

    /// Load and insist the stored config matches `expected`.
    pub fn load_compatible(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Checkpoint> {
        let ckpt = Checkpoint::load(path)?;
        let want = config_digest(expected);
        let got = ckpt.digest();
        if want != got {
            return Err(Error::Checkpoint(format!(
                "config digest mismatch: checkpoint {got}, run config {want}"
            )));
        }
        Ok(ckpt)
    }
}
