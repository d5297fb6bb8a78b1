//! Binary checkpoint: magic, format version, JSON header, raw f32 payload.
//!
//! ```text
//! b"FERATTCK" | u32 LE version | u64 LE header length | header JSON | payload
//! ```
//! The payload is every tensor's little-endian `f32` data in header order;
//! the header records its SHA-256.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TrainConfig;
use crate::error::{contract, Error, Result};
use crate::losses::GaussianManifoldConfig;
use crate::network::{FerAtt, ModelArm, NetworkConfig};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FERATTCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Where a checkpoint came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointProvenance {
    /// Digest of the checkpoint this one was fine-tuned from.
    pub base_digest: Option<String>,
    /// Input-noise level used while training.
    pub noise_sigma: f64,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    arm: ModelArm,
    manifold: GaussianManifoldConfig,
    train_config: TrainConfig,
    provenance: CheckpointProvenance,
    tensors: Vec<TensorRecord>,
    payload_sha256: String,
}

/// A trained model with everything needed to evaluate or resume it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    pub arm: ModelArm,
    pub manifold: GaussianManifoldConfig,
    pub train_config: TrainConfig,
    pub provenance: CheckpointProvenance,
    pub params: ParamStore<f32>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Checkpoint {
    pub fn from_model(
        model: &FerAtt<f32>,
        arm: ModelArm,
        manifold: GaussianManifoldConfig,
        train_config: TrainConfig,
        provenance: CheckpointProvenance,
    ) -> Self {
        Self {
            network: model.config().clone(),
            arm,
            manifold,
            train_config,
            provenance,
            params: model.params().clone(),
        }
    }

    /// Rebuilds the network with the stored weights.
    pub fn model(&self) -> Result<FerAtt<f32>> {
        let mut m = FerAtt::new(self.network.clone(), 0)?;
        m.load_params(self.params.clone())?;
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload = Vec::new();
        let mut tensors = Vec::new();
        for e in self.params.entries() {
            for v in e.value.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
            tensors.push(TensorRecord {
                name: e.name.clone(),
                shape: e.value.shape().to_vec(),
                trainable: e.trainable,
            });
        }
        let header = Header {
            network: self.network.clone(),
            arm: self.arm,
            manifold: self.manifold.clone(),
            train_config: self.train_config.clone(),
            provenance: self.provenance.clone(),
            tensors,
            payload_sha256: sha256_hex(&payload),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(contract("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch(format!(
                "checkpoint format {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(contract("checkpoint header is truncated"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen])?;
        let payload = &body[hlen..];
        let found = sha256_hex(payload);
        if found != header.payload_sha256 {
            return Err(Error::DigestMismatch {
                expected: header.payload_sha256,
                found,
            });
        }
        let mut params = ParamStore::new();
        let mut offset = 0;
        for t in &header.tensors {
            let n: usize = t.shape.iter().product();
            let end = offset + 4 * n;
            let chunk = payload
                .get(offset..end)
                .ok_or_else(|| contract("checkpoint payload is shorter than its tensor table"))?;
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            params.register(t.name.clone(), Tensor::from_vec(&t.shape, data), t.trainable);
            offset = end;
        }
        if offset != payload.len() {
            return Err(contract("checkpoint payload has trailing bytes"));
        }
        Ok(Self {
            network: header.network,
            arm: header.arm,
            manifold: header.manifold,
            train_config: header.train_config,
            provenance: header.provenance,
            params,
        })
    }

    /// Writes the checkpoint and returns the SHA-256 of the file.
    pub fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes)?;
        Ok(sha256_hex(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the serialized form.
    pub fn digest(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }
}
