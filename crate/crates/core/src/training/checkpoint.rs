//! Binary checkpoint container.
//!
//! ```text
//! b"TGTCKPT\0" | u32 version | u64 header length | JSON header | payload
//! ```
//!
//! All integers and tensor values are little-endian. The header lists every
//! tensor with its name, shape, dtype and byte offset into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

use super::config::TrainConfig;
use super::optimizer::AdamW;

pub const MAGIC: &[u8; 8] = b"TGTCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TensorRole {
    Param,
    AdamM,
    AdamV,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: TensorRole,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    train: TrainConfig,
    step: u64,
    decode_max_len: usize,
    optimizer_step: u64,
    split_fingerprint: String,
    tensors: Vec<TensorEntry>,
}

/// Parameters, optimizer moments, configuration and progress.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub step: u64,
    /// Autoregressive length cap derived from the training corpus.
    pub decode_max_len: usize,
    pub split_fingerprint: String,
    pub params: ParamStore<f32>,
    pub optimizer: AdamW<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut tensors = Vec::new();
        let mut payload = Vec::new();
        let mut push = |name: &str, role: TensorRole, t: &Tensor<f32>| {
            tensors.push(TensorEntry {
                name: name.to_string(),
                role,
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset: payload.len() as u64,
            });
            for v in t.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        };
        for p in self.params.iter() {
            push(&p.name, TensorRole::Param, &p.value);
        }
        if self.optimizer.m.len() != self.params.len() {
            return Err(Error::Contract("optimizer state does not match parameters".into()));
        }
        for (p, m) in self.params.iter().zip(&self.optimizer.m) {
            push(&p.name, TensorRole::AdamM, m);
        }
        for (p, v) in self.params.iter().zip(&self.optimizer.v) {
            push(&p.name, TensorRole::AdamV, v);
        }
        let header = Header {
            model: self.model.clone(),
            train: self.train.clone(),
            step: self.step,
            decode_max_len: self.decode_max_len,
            optimizer_step: self.optimizer.step,
            split_fingerprint: self.split_fingerprint.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..).ok_or_else(|| bad("truncated"))?;
        let json = body.get(..hlen).ok_or_else(|| bad("truncated header"))?;
        let payload = &body[hlen..];
        let header: Header = serde_json::from_slice(json)?;

        let read = |e: &TensorEntry| -> Result<Tensor<f32>> {
            if e.dtype != "f32" {
                return Err(bad(&format!("unsupported dtype {}", e.dtype)));
            }
            let count: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = payload.get(start..start + 4 * count).ok_or_else(|| bad("payload too short"))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            Tensor::new(e.shape.clone(), data)
        };
        let mut params = ParamStore::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for e in &header.tensors {
            let t = read(e)?;
            match e.role {
                TensorRole::Param => {
                    params.add(e.name.clone(), t)?;
                }
                TensorRole::AdamM => m.push(t),
                TensorRole::AdamV => v.push(t),
            }
        }
        if m.len() != params.len() || v.len() != params.len() {
            return Err(bad("optimizer moments do not match parameters"));
        }
        let optimizer = AdamW { config: header.train.optimizer, step: header.optimizer_step, m, v };
        Ok(Checkpoint {
            model: header.model,
            train: header.train,
            step: header.step,
            decode_max_len: header.decode_max_len,
            split_fingerprint: header.split_fingerprint,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copies stored values into `store`, matching parameters by name.
    pub fn restore_into(&self, store: &mut ParamStore<f32>) -> Result<()> {
        if store.len() != self.params.len() {
            return Err(Error::Format(format!(
                "checkpoint holds {} parameters, model has {}",
                self.params.len(),
                store.len()
            )));
        }
        for p in store.iter_mut() {
            let id = self.params.id(&p.name).ok_or_else(|| Error::Format(format!("checkpoint lacks {}", p.name)))?;
            let saved = self.params.value(id);
            if saved.shape() != p.value.shape() {
                return Err(Error::Format(format!("shape mismatch for {}", p.name)));
            }
            p.value = saved.clone();
        }
        Ok(())
    }
}
