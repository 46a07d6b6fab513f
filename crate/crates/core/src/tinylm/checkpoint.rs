// SPDX-License-Identifier: MIT OR Apache-2.0

//! Self-describing checkpoint container.
//!
//! Layout: the 8-byte magic `EDLBCKPT`, a little-endian `u32` version, a
//! little-endian `u64` header length, a JSON header (config, vocabulary,
//! training and edit provenance, tensor index), then every tensor as
//! little-endian `f64` values in index order.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Params, TrainConfig};
use crate::corpus::Tokenizer;
use crate::error::{LabError, Result};

const MAGIC: &[u8; 8] = b"EDLBCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub steps: usize,
    pub final_loss: Option<f64>,
    pub hyper: Option<TrainConfig>,
    /// Mean training loss over consecutive logging windows.
    pub loss_log: Vec<f64>,
}

/// One edit run applied on top of a base checkpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditProvenance {
    pub base_hash: String,
    pub plan_hash: String,
    pub batches: usize,
    pub layers: Vec<usize>,
    pub n_requests: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tokenizer: Tokenizer,
    pub params: Params,
    pub training_meta: TrainingMeta,
    pub provenance: Vec<EditProvenance>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tokenizer: Tokenizer,
    training_meta: TrainingMeta,
    provenance: Vec<EditProvenance>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Freshly initialised, untrained model.
    pub fn init(config: ModelConfig, tokenizer: Tokenizer) -> Result<Self> {
        config.validate()?;
        if tokenizer.vocab_size() != config.vocab_size {
            return Err(LabError::InvalidConfig(format!(
                "vocab_size {} does not match tokenizer size {}",
                config.vocab_size,
                tokenizer.vocab_size()
            )));
        }
        Ok(Self {
            params: Params::init(&config),
            config,
            tokenizer,
            training_meta: TrainingMeta::default(),
            provenance: Vec::new(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.params.tensors();
        let header = Header {
            config: self.config.clone(),
            tokenizer: self.tokenizer.clone(),
            training_meta: self.training_meta.clone(),
            provenance: self.provenance.clone(),
            tensors: tensors
                .iter()
                .map(|(name, shape, _)| TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n_values: usize = tensors.iter().map(|(_, _, v)| v.len()).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, values) in &tensors {
            for v in values.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: &str| LabError::Format(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(fail("missing checkpoint magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(LabError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(20..20 + hlen)
            .ok_or_else(|| fail("truncated header"))?;
        let header: Header = serde_json::from_slice(body)?;
        header.config.validate()?;
        let mut params = Params::zeros(&header.config);
        let expected: Vec<(String, Vec<usize>)> = params
            .tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        let listed: Vec<(String, Vec<usize>)> = header
            .tensors
            .iter()
            .map(|t| (t.name.clone(), t.shape.clone()))
            .collect();
        if expected != listed {
            return Err(fail("tensor index does not match the configured architecture"));
        }
        let mut cursor = 20 + hlen;
        for slot in params.tensors_mut() {
            let need = slot.len() * 8;
            let raw = bytes
                .get(cursor..cursor + need)
                .ok_or_else(|| fail("truncated tensor data"))?;
            for (v, chunk) in slot.iter_mut().zip(raw.chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            cursor += need;
        }
        if cursor != bytes.len() {
            return Err(fail("trailing bytes after tensor data"));
        }
        Ok(Self {
            config: header.config,
            tokenizer: header.tokenizer,
            params,
            training_meta: header.training_meta,
            provenance: header.provenance,
        })
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tinylm::model::tests::tiny_config;

    fn ckpt() -> Checkpoint {
        let tok = Tokenizer::from_texts(["a b c d e f"]);
        let cfg = ModelConfig {
            vocab_size: tok.vocab_size(),
            ..tiny_config()
        };
        Checkpoint::init(cfg, tok).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let c = ckpt();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.content_hash(), c.content_hash());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let c = ckpt();
        c.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), c);
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = ckpt().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8]).is_err());
        assert!(Checkpoint::from_bytes(b"not a checkpoint at all").is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong_version).is_err());
    }

    #[test]
    fn vocab_mismatch_rejected() {
        let tok = Tokenizer::from_texts(["a b"]);
        assert!(matches!(
            Checkpoint::init(tiny_config(), tok),
            Err(LabError::InvalidConfig(_))
        ));
    }
}
