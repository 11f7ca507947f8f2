//! Binary checkpoint format:
//!
//! ```text
//! magic "VSNT" | u32 version | u32 json_len | json meta (config, seed, epoch)
//! u32 param_count | per param: u32 name_len, name, u32 rank, u32 extents..., f32 data...
//! ```
//!
//! All integers and floats are little-endian. A save -> load round trip
//! rebuilds a model with bitwise-identical outputs.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{ModelConfig, SequenceClassifier};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"VSNT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
}

pub fn save_checkpoint(
    model: &SequenceClassifier<f32>,
    meta: &CheckpointMeta,
    path: &Path,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let json = serde_json::to_vec(meta)?;
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    let params = model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name().as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let shape = p.value().shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(SequenceClassifier<f32>, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Cursor { bytes: &bytes, pos: 0 };

    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file has {version}, supported {VERSION}"
        )));
    }
    let json_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len)?)?;
    meta.config.validate()?;

    let mut model = SequenceClassifier::new(&meta.config, meta.seed)?;
    let param_count = r.u32()? as usize;
    let mut loaded = std::collections::BTreeMap::new();
    for _ in 0..param_count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("parameter name is not utf-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if loaded.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter {name}")));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }

    for p in model.params_mut() {
        let value = loaded.remove(p.name()).ok_or_else(|| {
            Error::Checkpoint(format!("missing parameter {} for this config", p.name()))
        })?;
        if value.shape() != p.value().shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {} has shape {:?}, config wants {:?}",
                p.name(),
                value.shape(),
                p.value().shape()
            )));
        }
        p.set_value(value)?;
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(Error::Checkpoint(format!(
            "file carries parameter {extra} unknown to this config"
        )));
    }
    Ok((model, meta))
}

/// Header-only view for `inspect-checkpoint`.
pub struct CheckpointSummary {
    pub meta: CheckpointMeta,
    pub params: Vec<(String, Vec<usize>)>,
    pub total_values: usize,
}

pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointSummary> {
    let (model, meta) = load_checkpoint(path)?;
    let params: Vec<(String, Vec<usize>)> = model
        .params()
        .iter()
        .map(|p| (p.name().to_string(), p.value().shape().to_vec()))
        .collect();
    let total_values = model.params().iter().map(|p| p.value().numel()).sum();
    Ok(CheckpointSummary {
        meta,
        params,
        total_values,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated file: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Writer/reader used by tests that need to corrupt files in place.
pub fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn write_all(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(|e| Error::io(path, e))
}
