//! Parameter checkpoints: a JSON manifest next to a binary file of
//! little-endian `f64` values concatenated in manifest order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{NetworkSpec, ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the binary file.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub network: NetworkSpec,
    pub data_file: String,
    pub tensors: Vec<CheckpointEntry>,
}

/// Writes `<stem>.json` and `<stem>.bin`; returns the manifest path.
pub fn save_checkpoint(stem: &Path, spec: &NetworkSpec, params: &ParamStore) -> Result<PathBuf> {
    params.check_layout(spec)?;
    let manifest_path = stem.with_extension("json");
    let data_path = stem.with_extension("bin");
    let mut bytes = Vec::with_capacity(params.num_params() * 8);
    let mut tensors = Vec::new();
    for (name, t) in params.entries() {
        tensors.push(CheckpointEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: bytes.len(),
            len: t.len(),
        });
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = CheckpointManifest {
        format_version: CHECKPOINT_FORMAT,
        network: spec.clone(),
        data_file: data_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| {
                Error::InvalidArgument(format!("bad checkpoint path {}", stem.display()))
            })?
            .to_string(),
        tensors,
    };
    fs::write(&data_path, &bytes).map_err(|e| Error::io(&data_path, e))?;
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(manifest_path)
}

pub fn load_checkpoint(manifest_path: &Path) -> Result<(NetworkSpec, ParamStore)> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.to_path_buf(),
        message: e.to_string(),
    })?;
    if manifest.format_version != CHECKPOINT_FORMAT {
        return Err(Error::Parse {
            path: manifest_path.to_path_buf(),
            message: format!("unsupported checkpoint format {}", manifest.format_version),
        });
    }
    let data_path = manifest_path.with_file_name(&manifest.data_file);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let mut entries = Vec::new();
    for entry in &manifest.tensors {
        let end = entry.offset + entry.len * 8;
        if end > bytes.len() {
            return Err(Error::Parse {
                path: data_path.clone(),
                message: format!("tensor {} runs past the end of the file", entry.name),
            });
        }
        let data = bytes[entry.offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        entries.push((entry.name.clone(), Tensor::new(entry.shape.clone(), data)?));
    }
    let params = ParamStore::new(entries);
    params.check_layout(&manifest.network)?;
    Ok((manifest.network, params))
}
