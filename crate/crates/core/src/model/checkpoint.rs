//! On-disk checkpoints: a JSON manifest naming each tensor and its shape,
//! plus a sidecar of little-endian `f64` values in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelError};
use crate::autodiff::Tensor;

pub const CHECKPOINT_MANIFEST: &str = "checkpoint.manifest.json";
pub const CHECKPOINT_BIN: &str = "checkpoint.params.bin";
const FORMAT: &str = "units-ml-checkpoint";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    architecture: Architecture,
    params_file: String,
    byte_length: usize,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub entries: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ModelError + '_ {
    move |source| ModelError::Io { path: path.display().to_string(), source }
}

pub fn save_checkpoint(dir: &Path, architecture: &Architecture, entries: &[(String, Tensor)]) -> Result<(), ModelError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut bytes = Vec::with_capacity(entries.iter().map(|(_, t)| t.numel() * 8).sum());
    for (_, t) in entries {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: 1,
        architecture: architecture.clone(),
        params_file: CHECKPOINT_BIN.into(),
        byte_length: bytes.len(),
        entries: entries
            .iter()
            .map(|(name, t)| ManifestEntry { name: name.clone(), shape: t.shape().to_vec() })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let mpath = dir.join(CHECKPOINT_MANIFEST);
    fs::write(&mpath, json + "\n").map_err(io_err(&mpath))?;
    let bpath = dir.join(CHECKPOINT_BIN);
    fs::write(&bpath, bytes).map_err(io_err(&bpath))?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint, ModelError> {
    let mpath = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", mpath.display())))?;
    if manifest.format != FORMAT {
        return Err(ModelError::Checkpoint(format!("unknown format `{}`", manifest.format)));
    }
    let bpath = dir.join(&manifest.params_file);
    let bytes = fs::read(&bpath).map_err(io_err(&bpath))?;
    let expected: usize = manifest.entries.iter().map(|e| e.shape.iter().product::<usize>() * 8).sum();
    if bytes.len() != expected || manifest.byte_length != expected {
        return Err(ModelError::Checkpoint(format!(
            "byte length mismatch: {} has {} bytes, manifest shapes need {} (declared {})",
            bpath.display(),
            bytes.len(),
            expected,
            manifest.byte_length
        )));
    }
    let mut offset = 0;
    let mut entries = Vec::with_capacity(manifest.entries.len());
    for e in manifest.entries {
        let n: usize = e.shape.iter().product();
        let data = bytes[offset..offset + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset += n * 8;
        let t = Tensor::new(e.shape, data).map_err(|err| ModelError::Checkpoint(format!("{}: {err}", e.name)))?;
        entries.push((e.name, t));
    }
    Ok(Checkpoint { architecture: manifest.architecture, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ParamSet};

    #[test]
    fn round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let arch = Architecture::new(3, vec![5], 4);
        let p = init_params(&arch, 3);
        save_checkpoint(dir.path(), &arch, &p.named_tensors()).unwrap();
        let ck = load_checkpoint(dir.path()).unwrap();
        assert_eq!(ck.architecture, arch);
        assert_eq!(ck.entries, p.named_tensors());
        let tensors = ck.entries.into_iter().map(|(_, t)| t).collect();
        assert_eq!(ParamSet::zeros(&arch).with_tensors(tensors).unwrap(), p);
    }

    #[test]
    fn truncated_sidecar_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let arch = Architecture::new(2, vec![], 2);
        save_checkpoint(dir.path(), &arch, &ParamSet::zeros(&arch).named_tensors()).unwrap();
        let bin = dir.path().join(CHECKPOINT_BIN);
        let mut bytes = fs::read(&bin).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&bin, bytes).unwrap();
        let err = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(err.contains("byte length mismatch"), "{err}");
    }
}
