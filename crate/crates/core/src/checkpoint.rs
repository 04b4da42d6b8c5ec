//! Model checkpoints.
//!
//! Little-endian layout: magic `DCAE`, u32 format version, u32 tensor count,
//! then per tensor a u32 name length, UTF-8 name, u8 rank, rank × u64 dims and
//! an f32 payload, and finally a CRC32 of every preceding byte. Metadata is
//! stored as the JSON bytes of a rank-1 tensor named `meta.json`, one byte per
//! element.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DepCae;
use crate::pipeline::tns::{check_envelope, read_dims, read_payload, write_atomic, Reader};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DCAE";
pub const CHECKPOINT_VERSION: u32 = 1;
const META_TENSOR: &str = "meta.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub channel_plan: Vec<usize>,
    pub window_frames: usize,
    pub image_size: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Snapshot of the training configuration.
    pub config: serde_json::Value,
    pub epochs_completed: usize,
}

impl CheckpointMeta {
    pub fn for_model(
        model: &DepCae<f32>,
        seed: u64,
        config_hash: String,
        config: serde_json::Value,
    ) -> Self {
        CheckpointMeta {
            format_version: CHECKPOINT_VERSION,
            channel_plan: model.channel_plan().to_vec(),
            window_frames: model.window_frames(),
            image_size: model.image_size(),
            seed,
            config_hash,
            config,
            epochs_completed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub meta: CheckpointMeta,
    pub model: DepCae<f32>,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(model: &DepCae<f32>, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    let meta_bytes = serde_json::to_vec(meta)?;
    let meta_tensor = Tensor::from_vec(
        &[meta_bytes.len()],
        meta_bytes.iter().map(|&b| b as f32).collect(),
    )?;
    let tensors = model.named_tensors();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32 + 1).to_le_bytes());
    push_tensor(&mut out, META_TENSOR, &meta_tensor);
    for (name, t) in tensors {
        push_tensor(&mut out, &name, t);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parses a checkpoint. Nothing is built unless the whole file checks out.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelCheckpoint> {
    let body = check_envelope(bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let mut r = Reader::new(body);
    r.take(8)?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name = r.string()?;
        let dims = read_dims(&mut r)?;
        tensors.push((name, read_payload::<f32>(&mut r, &dims)?));
    }
    if r.remaining() != 0 {
        return Err(Error::Malformed(format!(
            "{} trailing bytes",
            r.remaining()
        )));
    }
    let pos = tensors
        .iter()
        .position(|(n, _)| n == META_TENSOR)
        .ok_or_else(|| Error::Malformed("checkpoint has no metadata".into()))?;
    let (_, meta_t) = tensors.remove(pos);
    let meta_bytes: Vec<u8> = meta_t.data().iter().map(|&v| v as u8).collect();
    let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)?;

    let mut model = DepCae::<f32>::new(
        &meta.channel_plan,
        meta.window_frames,
        meta.image_size,
        meta.seed,
    )?;
    let expected = model.named_tensors().len();
    if tensors.len() != expected {
        return Err(Error::Malformed(format!(
            "expected {expected} tensors, found {}",
            tensors.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for (name, t) in tensors {
        if !seen.insert(name.clone()) {
            return Err(Error::Malformed(format!("duplicate tensor `{name}`")));
        }
        model.set_tensor(&name, t)?;
    }
    Ok(ModelCheckpoint { meta, model })
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &DepCae<f32>,
    meta: &CheckpointMeta,
) -> Result<()> {
    write_atomic(path.as_ref(), &encode_checkpoint(model, meta)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    decode_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
