//! Binary checkpoint container.
//!
//! Layout: magic `SGCK`, `u32` version, `u64` header length, JSON header,
//! then every parameter followed by Adam's first and second moments as
//! little-endian `f64`, and finally a SHA-256 digest of all preceding bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Mat;

use super::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamMeta {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub config_hash: String,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps. Together with the seed this is the whole
    /// random state: every draw is derived from `(seed, epoch, step, sample)`.
    pub step: u64,
    pub adam_t: u64,
    pub params: Vec<ParamMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<Mat>,
    pub adam_m: Vec<Mat>,
    pub adam_v: Vec<Mat>,
}

/// Hex SHA-256 of the configuration that fixes a training trajectory. The
/// epoch budget is excluded so a run can be extended.
pub fn config_hash(model: &ModelConfig, train: &TrainConfig) -> String {
    let mut train = train.clone();
    train.epochs = 0;
    let json = serde_json::to_vec(&(model, &train)).expect("configs serialize");
    hex_digest(&json)
}

pub(crate) fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for block in [&self.params, &self.adam_m, &self.adam_v] {
            for m in block {
                for x in m.data() {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 + 32 {
            return Err(bad("file too short"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch, file is corrupt"));
        }
        if &body[0..4] != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize.checked_add(hlen).filter(|&e| e <= body.len()).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&body[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let mut cursor = header_end;
        let mut read_block = || -> Result<Vec<Mat>> {
            let mut out = Vec::with_capacity(header.params.len());
            for p in &header.params {
                let n = p.rows * p.cols;
                let end = cursor + 8 * n;
                if end > body.len() {
                    return Err(bad("truncated tensor data"));
                }
                let data = body[cursor..end]
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                cursor = end;
                out.push(Mat::from_vec(p.rows, p.cols, data));
            }
            Ok(out)
        };
        let params = read_block()?;
        let adam_m = read_block()?;
        let adam_v = read_block()?;
        if cursor != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { header, params, adam_m, adam_v })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Fails unless the stored configuration hash equals `expected`.
    pub fn check_hash(&self, expected: &str) -> Result<()> {
        if self.header.config_hash != expected {
            return Err(Error::Checkpoint(format!(
                "config hash mismatch: checkpoint {} vs current {}",
                self.header.config_hash, expected
            )));
        }
        Ok(())
    }
}
