//! Checkpoints: `manifest.json` (layer names, shapes, hyperparameters) plus
//! one raw little-endian `f32` file per parameter tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Model;

pub const CHECKPOINT_FORMAT: &str = "cascade-seg-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub hyper: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint<M: Model<f32>>(model: &M, kind: &str, hyper: serde_json::Value, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = Vec::new();
    for (name, p) in model.params() {
        let file = format!("{name}.raw");
        let mut bytes = Vec::with_capacity(p.len() * 4);
        for v in &p.value {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        tensors.push(TensorEntry {
            name,
            shape: p.shape.clone(),
            file,
        });
    }
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        kind: kind.into(),
        hyper,
        tensors,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&path, e))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    if m.format != CHECKPOINT_FORMAT {
        return Err(Error::format(&path, format!("unknown checkpoint format {:?}", m.format)));
    }
    Ok(m)
}

/// Overwrites the model's parameters with the tensors stored in `dir`.
/// Names and shapes must match the model exactly.
pub fn load_into<M: Model<f32>>(model: &mut M, dir: &Path, kind: &str) -> Result<CheckpointManifest> {
    let manifest = read_manifest(dir)?;
    if manifest.kind != kind {
        return Err(Error::Config(format!("checkpoint holds a {:?}, expected {kind:?}", manifest.kind)));
    }
    let names: Vec<(String, Vec<usize>)> = model.params().into_iter().map(|(n, p)| (n, p.shape.clone())).collect();
    if names.len() != manifest.tensors.len() {
        return Err(Error::format(dir, "tensor count does not match model"));
    }
    for ((name, shape), (p, entry)) in names.iter().zip(model.params_mut().into_iter().zip(&manifest.tensors)) {
        if *name != entry.name || *shape != entry.shape {
            return Err(Error::format(dir, format!("tensor {} does not match model tensor {name}", entry.name)));
        }
        let path = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.len() != p.len() * 4 {
            return Err(Error::format(&path, format!("{} bytes for {} values", bytes.len(), p.len())));
        }
        for (v, c) in p.value.iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
        }
        p.velocity.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(manifest)
}
