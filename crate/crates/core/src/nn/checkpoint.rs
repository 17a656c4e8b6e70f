//! Parameter checkpoints: a JSON manifest plus one little-endian `f32` blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{init_network, Network, Topology};
use crate::sampler::ModelConfig;
use crate::util::{f32s_to_le, le_to_f32s, read_file, sha256_hex, write_file};
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ablation-lab-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    /// Offset into the blob, in values.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub config: ModelConfig,
    pub topology: Topology,
    pub seed: u64,
    pub step: u64,
    pub blob: String,
    pub sha256: String,
    pub tensors: Vec<TensorEntry>,
}

/// Writes `<stem>.json` and `<stem>.f32` into `dir`.
pub fn save_checkpoint(net: &Network<f32>, step: u64, dir: &Path, stem: &str) -> Result<CheckpointManifest> {
    let mut values = Vec::new();
    let mut tensors = Vec::new();
    let named = net
        .params()
        .into_iter()
        .map(|(n, t, _)| (n, t))
        .chain(net.buffers());
    for (name, t) in named {
        tensors.push(TensorEntry {
            name,
            offset: values.len(),
            len: t.len(),
        });
        values.extend_from_slice(t);
    }
    let bytes = f32s_to_le(&values);
    let blob = format!("{stem}.f32");
    write_file(&dir.join(&blob), &bytes)?;
    let manifest = CheckpointManifest {
        format: CHECKPOINT_FORMAT.into(),
        config: net.config,
        topology: net.topology.clone(),
        seed: net.seed,
        step,
        blob,
        sha256: sha256_hex(&bytes),
        tensors,
    };
    write_file(&dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(Network<f32>, CheckpointManifest)> {
    let manifest: CheckpointManifest = serde_json::from_slice(&read_file(&dir.join(format!("{stem}.json")))?)?;
    if manifest.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidArgument(format!("not a checkpoint: format {:?}", manifest.format)));
    }
    let bytes = read_file(&dir.join(&manifest.blob))?;
    if sha256_hex(&bytes) != manifest.sha256 {
        return Err(Error::ChecksumMismatch(manifest.blob.clone()));
    }
    let values = le_to_f32s(&bytes);
    let mut net: Network<f32> = init_network(manifest.config, &manifest.topology, manifest.seed)?;
    let n_params = net.params().len();
    let n_buffers = net.buffers().len();
    if n_params + n_buffers != manifest.tensors.len() {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint has {} tensors, network has {}",
            manifest.tensors.len(),
            n_params + n_buffers
        )));
    }
    let copy = |name: &str, dst: &mut Vec<f32>, e: &TensorEntry| -> Result<()> {
        if name != e.name || dst.len() != e.len || e.offset + e.len > values.len() {
            return Err(Error::ShapeMismatch(format!("tensor {} does not match {name}", e.name)));
        }
        dst.copy_from_slice(&values[e.offset..e.offset + e.len]);
        Ok(())
    };
    for ((name, dst, _), e) in net.params_mut().into_iter().zip(&manifest.tensors) {
        copy(name.as_str(), dst, e)?;
    }
    for ((name, dst), e) in net.buffers_mut().into_iter().zip(&manifest.tensors[n_params..]) {
        copy(name.as_str(), dst, e)?;
    }
    Ok((net, manifest))
}
