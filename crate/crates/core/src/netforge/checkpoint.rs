//! Single-file archive: magic, manifest length, JSON manifest, then
//! little-endian f32 tensor blobs at 64-byte aligned offsets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{NamedTensor, ParamStore, Role};
use super::{ModelGraph, ModelSpec, Stage};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MMCKPT\x00\x01";
const HEADER: usize = 16;
const ALIGN: usize = 64;
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: String,
    role: Role,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    bytes: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupEntry {
    name: String,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    stage: Stage,
    spec: ModelSpec,
    groups: Vec<GroupEntry>,
    tensors: Vec<TensorEntry>,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGN) * ALIGN
}

/// Serializes `model` into the archive layout.
pub fn checkpoint_bytes(model: &ModelGraph<f32>) -> Result<Vec<u8>> {
    // offsets depend on the manifest length, which depends on the offsets;
    // iterate until the header size is stable
    let mut data_start = 0usize;
    loop {
        let mut offset = data_start;
        let tensors: Vec<TensorEntry> = model
            .params
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    group: t.group.clone(),
                    role: t.role,
                    shape: t.shape.clone(),
                    dtype: "f32".into(),
                    offset: offset as u64,
                    bytes: (t.data.len() * 4) as u64,
                };
                offset = align(offset + t.data.len() * 4);
                e
            })
            .collect();
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            stage: model.stage(),
            spec: model.spec.clone(),
            groups: model.params.groups.iter().map(|(n, t)| GroupEntry { name: n.clone(), trainable: *t }).collect(),
            tensors,
        };
        let json = serde_json::to_vec(&manifest)?;
        let start = align(HEADER + json.len());
        if start != data_start {
            data_start = start;
            continue;
        }
        let total = manifest.tensors.last().map_or(start, |t| t.offset as usize + t.bytes as usize);
        let mut out = vec![0u8; total];
        out[..8].copy_from_slice(MAGIC);
        out[8..16].copy_from_slice(&(json.len() as u64).to_le_bytes());
        out[HEADER..HEADER + json.len()].copy_from_slice(&json);
        for (e, t) in manifest.tensors.iter().zip(&model.params.tensors) {
            let mut at = e.offset as usize;
            for v in &t.data {
                out[at..at + 4].copy_from_slice(&v.to_le_bytes());
                at += 4;
            }
        }
        return Ok(out);
    }
}

pub fn save_checkpoint(model: &ModelGraph<f32>, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(path, checkpoint_bytes(model)?)?;
    Ok(())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelGraph<f32>> {
    let bad = |offset: usize, reason: String| Error::Checkpoint { offset: offset as u64, reason };
    if bytes.len() < HEADER {
        return Err(bad(bytes.len(), "file shorter than the header".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(bad(0, "not a checkpoint archive".into()));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = HEADER.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad(8, format!("manifest length {len} exceeds file")))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[HEADER..end]).map_err(|e| bad(HEADER + e.column(), format!("corrupt manifest: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(bad(HEADER, format!("unsupported format version {}", manifest.format_version)));
    }
    let mut store = ParamStore { tensors: Vec::new(), groups: manifest.groups.iter().map(|g| (g.name.clone(), g.trainable)).collect() };
    let mut expected_end = align(end);
    for e in &manifest.tensors {
        let (off, n) = (e.offset as usize, e.bytes as usize);
        if e.dtype != "f32" || n != e.shape.iter().product::<usize>() * 4 {
            return Err(bad(off, format!("tensor {} has an inconsistent dtype or size", e.name)));
        }
        if off % ALIGN != 0 {
            return Err(bad(off, format!("tensor {} is not 64-byte aligned", e.name)));
        }
        let blob = bytes.get(off..off + n).ok_or_else(|| bad(off, format!("truncated blob for tensor {}", e.name)))?;
        let data = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        store.tensors.push(NamedTensor { name: e.name.clone(), group: e.group.clone(), role: e.role, shape: e.shape.clone(), data });
        expected_end = off + n;
    }
    if bytes.len() != expected_end {
        return Err(bad(expected_end.min(bytes.len()), format!("file is {} bytes, expected {expected_end}", bytes.len())));
    }
    let model = ModelGraph::with_params(manifest.spec, store)?;
    if model.stage() != manifest.stage {
        return Err(bad(HEADER, "stage tag does not match topology".into()));
    }
    Ok(model)
}

pub fn load_checkpoint(path: &Path) -> Result<ModelGraph<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Ingest { path: path.to_path_buf(), reason: e.to_string() })?;
    checkpoint_from_bytes(&bytes)
}
