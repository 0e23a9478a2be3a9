//! Checkpoint archive: 8 magic bytes, little-endian `u32` version, `u64`
//! header length, a JSON header, then the tensors as little-endian `f64`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::fusion::Model;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FSPCKPT\n";
pub const VERSION: u32 = 1;
const FORMAT_TAG: &str = "freespace-checkpoint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

/// Provenance stored next to the parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub train: Option<TrainConfig>,
    pub iterations_done: usize,
    pub final_loss: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    model_config: ModelConfig,
    meta: CheckpointMeta,
    tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &Model, meta: &CheckpointMeta) -> Vec<u8> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (name, t) in model.params().iter() {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.len(),
        });
        offset += t.len();
    }
    let header = Header {
        format: FORMAT_TAG.into(),
        version: VERSION,
        model_config: model.config().clone(),
        meta: meta.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(20 + json.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in model.params().iter() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Model, CheckpointMeta)> {
    let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic bytes"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("bad header: {e}")))?;
    if header.format != FORMAT_TAG || header.version != version {
        return Err(bad("header does not describe a checkpoint"));
    }
    let payload = &body[hlen..];
    let mut params = ParamStore::new();
    for e in header.tensors {
        let end = e.offset.checked_add(e.len).ok_or_else(|| bad("tensor range overflows"))?;
        if end * 8 > payload.len() {
            return Err(bad(&format!("payload truncated in `{}`", e.name)));
        }
        let data: Vec<f64> = payload[e.offset * 8..end * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(e.shape, data).map_err(|_| bad(&format!("shape of `{}` does not match its length", e.name)))?;
        params.insert(e.name, t);
    }
    let model = Model::from_parts(header.model_config, params)?;
    Ok((model, header.meta))
}

pub fn save(model: &Model, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&to_bytes(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
