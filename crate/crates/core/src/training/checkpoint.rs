//! Checkpoint container: 8-byte magic, little-endian `u64` manifest length,
//! JSON manifest, then the raw little-endian tensor payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use taborder_tensor::{AdamState, Scalar, Tensor};

use super::config::TrainConfig;
use crate::error::{io_err, Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"TABORDCK";
pub const FORMAT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Position in the deterministic random streams: the next step draws
/// datasets starting at `next_index` under `master_seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngState {
    pub master_seed: u64,
    pub next_index: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    dtype: String,
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    rng: RngState,
    tensors: Vec<TensorEntry>,
    payload_bytes: u64,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub train: TrainConfig,
    pub step: u64,
    pub rng: RngState,
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn new(params: ModelParams<T>, adam: AdamState<T>, train: TrainConfig) -> Self {
        let step = adam.step_count;
        let rng = RngState {
            master_seed: train.seed,
            next_index: step * train.batch_size as u64,
        };
        Self {
            train,
            step,
            rng,
            params,
            adam,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut payload = Vec::new();
        let mut push = |name: String, t: &Tensor<T>| {
            entries.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                offset: payload.len() as u64,
                dtype: T::DTYPE.to_string(),
            });
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        };
        let names = self.params.names();
        for (name, t) in names.iter().zip(self.params.tensors()) {
            push(name.clone(), t);
        }
        for (name, t) in names.iter().zip(&self.adam.first_moment) {
            push(format!("adam.m.{name}"), t);
        }
        for (name, t) in names.iter().zip(&self.adam.second_moment) {
            push(format!("adam.v.{name}"), t);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            dtype: T::DTYPE.to_string(),
            model: self.params.config().clone(),
            train: self.train.clone(),
            step: self.step,
            rng: self.rng,
            tensors: entries,
            payload_bytes: payload.len() as u64,
            sha256: sha256_hex(&payload),
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let manifest = read_manifest(bytes)?;
        if manifest.dtype != T::DTYPE {
            return Err(bad(format!("checkpoint holds {} tensors, {} requested", manifest.dtype, T::DTYPE)));
        }
        let header = 16 + manifest_len(bytes)?;
        let payload = &bytes[header..];
        if payload.len() as u64 != manifest.payload_bytes {
            return Err(bad(format!(
                "payload is {} bytes, manifest says {}",
                payload.len(),
                manifest.payload_bytes
            )));
        }
        if sha256_hex(payload) != manifest.sha256 {
            return Err(bad("payload checksum mismatch"));
        }
        let mut expected_offset = 0u64;
        let mut tensors = Vec::with_capacity(manifest.tensors.len());
        for e in &manifest.tensors {
            if e.dtype != T::DTYPE {
                return Err(bad(format!("tensor {} has dtype {}", e.name, e.dtype)));
            }
            if e.offset != expected_offset {
                return Err(bad(format!("tensor {} at offset {}, expected {expected_offset}", e.name, e.offset)));
            }
            let count = e
                .shape
                .iter()
                .try_fold(1usize, |a, &s| a.checked_mul(s))
                .ok_or_else(|| bad("tensor size overflow"))?;
            let len = count.checked_mul(T::BYTES).ok_or_else(|| bad("tensor size overflow"))? as u64;
            let end = e.offset.checked_add(len).ok_or_else(|| bad("tensor size overflow"))?;
            if end > payload.len() as u64 {
                return Err(bad(format!("tensor {} runs past the payload", e.name)));
            }
            let raw = &payload[e.offset as usize..end as usize];
            let data: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
            let t = Tensor::new(e.shape.clone(), data).map_err(|err| bad(format!("tensor {}: {err}", e.name)))?;
            tensors.push((e.name.clone(), t));
            expected_offset = end;
        }
        if expected_offset != manifest.payload_bytes {
            return Err(bad("payload has trailing bytes"));
        }
        if tensors.len() % 3 != 0 {
            return Err(bad("tensor list is not parameters plus two moment sets"));
        }
        let k = tensors.len() / 3;
        let mut v_part = tensors.split_off(2 * k);
        let mut m_part = tensors.split_off(k);
        let params = ModelParams::from_named(&manifest.model, tensors).map_err(|e| bad(e.to_string()))?;
        for (prefix, part) in [("adam.m.", &mut m_part), ("adam.v.", &mut v_part)] {
            for ((name, t), want) in part.iter().zip(params.names()) {
                if name.strip_prefix(prefix) != Some(want.as_str()) {
                    return Err(bad(format!("unexpected tensor {name}")));
                }
                if t.shape() != params.get(want).expect("present").shape() {
                    return Err(bad(format!("tensor {name} has the wrong shape")));
                }
            }
        }
        manifest.train.validate().map_err(|e| bad(e.to_string()))?;
        let mut adam = AdamState::new(
            params.tensors(),
            manifest.train.lr,
            manifest.train.warmup_ratio,
            manifest.train.weight_decay,
        )
        .map_err(|e| bad(e.to_string()))?;
        adam.first_moment = m_part.into_iter().map(|(_, t)| t).collect();
        adam.second_moment = v_part.into_iter().map(|(_, t)| t).collect();
        adam.step_count = manifest.step;
        Ok(Self {
            train: manifest.train,
            step: manifest.step,
            rng: manifest.rng,
            params,
            adam,
        })
    }
}

fn manifest_len(bytes: &[u8]) -> Result<usize> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let mut len = [0u8; 8];
    len.copy_from_slice(&bytes[8..16]);
    let len = u64::from_le_bytes(len);
    if len > (bytes.len() - 16) as u64 {
        return Err(bad("truncated manifest"));
    }
    Ok(len as usize)
}

fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    let len = manifest_len(bytes)?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[16..16 + len]).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(format!(
            "format version {} (supported: {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    manifest.model.validate().map_err(|e| bad(e.to_string()))?;
    Ok(manifest)
}

/// Scalar type stored in a checkpoint (`"f32"` or `"f64"`).
pub fn checkpoint_dtype(bytes: &[u8]) -> Result<String> {
    Ok(read_manifest(bytes)?.dtype)
}

pub fn save_checkpoint<T: Scalar>(ck: &Checkpoint<T>, path: &Path) -> Result<()> {
    std::fs::write(path, ck.to_bytes()).map_err(io_err(path))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    Checkpoint::from_bytes(&bytes)
}
