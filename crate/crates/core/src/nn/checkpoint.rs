//! Checkpoints are a JSON manifest next to a `.bin` payload of little-endian
//! f32 parameters in store order.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{NetSpec, PolicyParams, TensorInfo};
use crate::io::{read_json, write_atomic, write_json};
use crate::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub version: u32,
    pub spec: NetSpec,
    pub tensors: Vec<TensorInfo>,
    pub optimizer_step: u64,
    /// Environment steps consumed when the checkpoint was written.
    pub env_step: u64,
    pub config_hash: String,
    pub payload: String,
}

/// Hex SHA-256 of a configuration's bytes.
pub fn config_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn payload_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

pub fn save_checkpoint(
    path: &Path,
    params: &PolicyParams,
    optimizer_step: u64,
    env_step: u64,
    config_hash: &str,
) -> Result<CheckpointMeta> {
    if !params.is_finite() {
        return Err(Error::NonFinite("refusing to checkpoint non-finite parameters".into()));
    }
    let bin = payload_path(path);
    let mut bytes = Vec::with_capacity(params.len() * 4);
    for v in params.as_slice() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    write_atomic(&bin, &bytes)?;
    let meta = CheckpointMeta {
        version: CHECKPOINT_VERSION,
        spec: params.spec().clone(),
        tensors: params.tensors().to_vec(),
        optimizer_step,
        env_step,
        config_hash: config_hash.to_string(),
        payload: bin.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string(),
    };
    write_json(path, &meta)?;
    Ok(meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicyParams, CheckpointMeta)> {
    let meta: CheckpointMeta = read_json(path)?;
    let format = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    if meta.version != CHECKPOINT_VERSION {
        return Err(format(format!("unsupported checkpoint version {}", meta.version)));
    }
    let params = PolicyParams::zeros(meta.spec.clone())?;
    if params.tensors() != meta.tensors.as_slice() {
        return Err(format("tensor table does not match the architecture".into()));
    }
    let bin = path.with_file_name(&meta.payload);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    if bytes.len() != params.len() * 4 {
        return Err(format(format!(
            "payload holds {} bytes, expected {}",
            bytes.len(),
            params.len() * 4
        )));
    }
    let data: Vec<f64> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let params = PolicyParams::from_data(meta.spec.clone(), data)?;
    if !params.is_finite() {
        return Err(format("payload contains non-finite values".into()));
    }
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Arch, HeadKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_f32_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetSpec::new(Arch::FfStats, &[2, 4, 3], 6, HeadKind::ActorCritic);
        let p = PolicyParams::init(spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let path = dir.path().join("model.json");
        save_checkpoint(&path, &p, 7, 4096, &config_hash(b"{}")).unwrap();
        let (q, meta) = load_checkpoint(&path).unwrap();
        assert_eq!(meta.optimizer_step, 7);
        assert_eq!(meta.env_step, 4096);
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            assert_eq!(*a as f32 as f64, *b);
        }
        // A second round trip is lossless.
        save_checkpoint(&path, &q, 7, 4096, "x").unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().0, q);
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = NetSpec::new(Arch::FfStats, &[2, 4, 1], 6, HeadKind::QValues);
        let p = PolicyParams::zeros(spec).unwrap();
        let path = dir.path().join("m.json");
        save_checkpoint(&path, &p, 0, 0, "").unwrap();
        let bin = path.with_extension("bin");
        let bytes = std::fs::read(&bin).unwrap();
        std::fs::write(&bin, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
    }
}
