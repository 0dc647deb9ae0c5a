//! Checkpoints: a JSON manifest plus a sidecar of little-endian `f64`
//! payloads in manifest tensor order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{eval_seed, RunConfig};
use crate::autodiff::Tensor;
use crate::cells::{Model, ModelSpec};
use crate::complex::Permutation;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tasks::Vocab;

const FORMAT: &str = "holocell-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub model: ModelSpec,
    pub step: u64,
    pub eval_seed: u64,
    pub vocab: Vocab,
    /// Per layer, the fixed permutations of that layer.
    pub permutations: Vec<Vec<Permutation>>,
    pub tensors: Vec<TensorEntry>,
    /// Sidecar file name, relative to the manifest.
    pub payload: String,
    pub payload_bytes: u64,
    pub payload_sha256: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `<dir>/<stem>.bin` and then `<dir>/<stem>.json`; returns the
/// manifest path.
pub fn save_checkpoint(dir: &Path, stem: &str, model: &Model, config: &RunConfig, step: u64) -> Result<PathBuf> {
    let store = model.params();
    let mut payload = Vec::with_capacity(8 * store.n_scalars());
    for t in store.tensors() {
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let bin_name = format!("{stem}.bin");
    let manifest = CheckpointManifest {
        format: FORMAT.into(),
        version: VERSION,
        config: config.clone(),
        model: model.spec().clone(),
        step,
        eval_seed: eval_seed(config.seed),
        vocab: config.vocab(),
        permutations: model.permutations(),
        tensors: store
            .names()
            .iter()
            .zip(store.tensors())
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape(),
            })
            .collect(),
        payload: bin_name.clone(),
        payload_bytes: payload.len() as u64,
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let bin = dir.join(&bin_name);
    fs::write(&bin, &payload).map_err(|e| Error::io(&bin, e))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(json)
}

/// Rebuilds the model stored at `manifest_path`, bit-exactly.
pub fn load_checkpoint(manifest_path: &Path) -> Result<(Model, CheckpointManifest)> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let m: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", manifest_path.display())))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format {} v{}",
            m.format, m.version
        )));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let bin = dir.join(&m.payload);
    let payload = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if payload.len() as u64 != m.payload_bytes {
        return Err(Error::Checkpoint(format!(
            "payload holds {} bytes, manifest says {}",
            payload.len(),
            m.payload_bytes
        )));
    }
    if hex(&Sha256::digest(&payload)) != m.payload_sha256 {
        return Err(Error::Checkpoint("payload checksum mismatch".into()));
    }

    // The initial draw is discarded: every tensor and permutation is replaced.
    let mut model = Model::new(m.model.clone(), &mut stream_rng(0, 0))
        .map_err(|e| Error::Checkpoint(format!("model spec: {e}")))?;
    let store = model.params();
    if store.len() != m.tensors.len()
        || store
            .names()
            .iter()
            .zip(store.tensors())
            .zip(&m.tensors)
            .any(|((n, t), e)| *n != e.name || t.shape() != e.shape)
    {
        return Err(Error::Checkpoint("tensor list does not match the model".into()));
    }
    if payload.len() != 8 * store.n_scalars() {
        return Err(Error::Checkpoint("payload size does not match tensor shapes".into()));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    for (t, e) in model.params_mut().tensors_mut().iter_mut().zip(&m.tensors) {
        let data: Vec<f64> = values.by_ref().take(e.shape[0] * e.shape[1]).collect();
        *t = Tensor::new(e.shape[0], e.shape[1], data)?;
    }
    model
        .set_permutations(m.permutations.clone())
        .map_err(|e| Error::Checkpoint(format!("permutations: {e}")))?;
    Ok((model, m))
}
