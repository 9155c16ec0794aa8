//! "SNCK" checkpoint container: model config plus free-form JSON metadata,
//! followed by named f32 tensors. Little-endian throughout.

use crate::graph::{ParamStore, Tensor};
use crate::model::{check_params, ModelConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"SNCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    /// Model parameters followed by any extra named tensors.
    pub fn new(
        model: ModelConfig,
        meta: serde_json::Value,
        params: &ParamStore<f32>,
        extra: Vec<(String, Tensor<f32>)>,
    ) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = params
            .names
            .iter()
            .cloned()
            .zip(params.tensors.iter().cloned())
            .collect();
        tensors.extend(extra);
        Self { model, meta, tensors }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Tensors whose names start with `prefix`, with the prefix stripped.
    pub fn with_prefix(&self, prefix: &str) -> ParamStore<f32> {
        let mut out = ParamStore::new();
        for (n, t) in &self.tensors {
            if let Some(rest) = n.strip_prefix(prefix) {
                out.push(rest, t.clone());
            }
        }
        out
    }

    /// The model parameters, validated against the stored config. Names with
    /// an `adam.` or `best.` prefix hold training state and are skipped.
    pub fn params(&self) -> Result<ParamStore<f32>, CheckpointError> {
        let mut out = ParamStore::new();
        for (n, t) in &self.tensors {
            if !n.starts_with("adam.") && !n.starts_with("best.") {
                out.push(n.clone(), t.clone());
            }
        }
        check_params(&self.model, &out).map_err(|e| CheckpointError::Format(e.to_string()))?;
        Ok(out)
    }

    pub fn encode(&self) -> Result<Vec<u8>, CheckpointError> {
        let header = serde_json::to_vec(&Header {
            model: self.model.clone(),
            meta: self.meta.clone(),
        })
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
        let mut out =
            Vec::with_capacity(64 + header.len() + 4 * self.tensors.iter().map(|(_, t)| t.len()).sum::<usize>());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize || t.shape.len() > u8::MAX as usize {
                return Err(CheckpointError::Format(format!("tensor {name} cannot be stored")));
            }
            out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            out.extend_from_slice(nb);
            out.push(t.shape.len() as u8);
            for d in &t.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            let nl = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(nl)?)
                .map_err(|_| CheckpointError::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .ok_or_else(|| CheckpointError::Format("tensor too large".into()))?;
            let bytes = r.take(len.checked_mul(4).ok_or(CheckpointError::Truncated(buf.len()))?)?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor { shape, data }));
        }
        if r.pos != buf.len() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }
        Ok(Self {
            model: header.model,
            meta: header.meta,
            tensors,
        })
    }

    /// Writes via a temporary file so a crash never leaves a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let tmp = path.with_extension("snck.tmp");
        std::fs::write(&tmp, self.encode()?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::decode(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.buf.len()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16, CheckpointError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
