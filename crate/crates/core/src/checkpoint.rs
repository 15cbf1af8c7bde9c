//! On-disk model container: `manifest.json` plus one tensor dump per parameter under `params/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{AfmNet, ModelConfig};
use crate::nn::{ParamKind, ParamStore};
use crate::tensor::{read_tensor, write_tensor, Real};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT: &str = "afmnet-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    pub file: String,
    /// SHA-256 of the blob, hex encoded.
    pub sha256: String,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub precision: u8,
    pub model: ModelConfig,
    /// Free-form run metadata (training config, dataset, class names).
    #[serde(default)]
    pub meta: serde_json::Value,
    pub params: Vec<ParamRecord>,
}

impl Manifest {
    /// Trainable element count recorded in the parameter index.
    pub fn trainable_elements(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.shape.iter().product::<usize>())
            .sum()
    }
}

pub struct Checkpoint<T: Real> {
    pub manifest: Manifest,
    pub net: AfmNet,
    pub store: ParamStore<T>,
}

pub fn save<T: Real>(dir: &Path, config: &ModelConfig, store: &ParamStore<T>, meta: serde_json::Value) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir).map_err(|e| Error::io(&params_dir, e))?;
    let mut params = Vec::with_capacity(store.len());
    for e in store.entries() {
        let file = format!("params/{}.bin", e.name);
        let path = dir.join(&file);
        let blob = write_tensor(&e.value);
        fs::write(&path, &blob).map_err(|err| Error::io(&path, err))?;
        params.push(ParamRecord {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            kind: e.kind,
            file,
            sha256: sha256_hex(&blob),
        });
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        precision: T::PRECISION.bits(),
        model: config.clone(),
        meta,
        params,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::Integrity(format!("{}: {e}", path.display())))?;
    if manifest.format != FORMAT {
        return Err(Error::Integrity(format!(
            "unknown checkpoint format {:?}",
            manifest.format
        )));
    }
    Ok(manifest)
}

/// Rebuilds the model described by the manifest and fills every parameter from its blob.
pub fn load<T: Real>(dir: &Path) -> Result<Checkpoint<T>> {
    let manifest = read_manifest(dir)?;
    let (net, mut store) = AfmNet::build::<T>(&manifest.model, 0)
        .map_err(|e| Error::Integrity(format!("manifest model config is invalid: {e}")))?;
    let mut seen = vec![false; manifest.params.len()];
    for entry in store.entries_mut() {
        let (i, rec) = manifest
            .params
            .iter()
            .enumerate()
            .find(|(_, r)| r.name == entry.name)
            .ok_or_else(|| Error::Integrity(format!("parameter {} missing from manifest", entry.name)))?;
        seen[i] = true;
        if rec.shape != entry.value.shape() || rec.kind != entry.kind {
            return Err(Error::Integrity(format!(
                "parameter {}: manifest records {:?} {:?}, model needs {:?} {:?}",
                rec.name,
                rec.kind,
                rec.shape,
                entry.kind,
                entry.value.shape()
            )));
        }
        let path: PathBuf = dir.join(&rec.file);
        let bytes = fs::read(&path).map_err(|e| Error::Integrity(format!("parameter {}: {e}", rec.name)))?;
        if sha256_hex(&bytes) != rec.sha256 {
            return Err(Error::Integrity(format!(
                "parameter {}: blob checksum mismatch",
                rec.name
            )));
        }
        let value = read_tensor::<T>(&bytes, &format!("parameter {}", rec.name))?;
        if value.shape() != rec.shape.as_slice() {
            return Err(Error::Integrity(format!(
                "parameter {}: blob shape {:?} differs from manifest {:?}",
                rec.name,
                value.shape(),
                rec.shape
            )));
        }
        entry.value = value;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Integrity(format!(
            "manifest lists {} which the model does not have",
            manifest.params[i].name
        )));
    }
    Ok(Checkpoint { manifest, net, store })
}

/// As [`load`], but rejects a checkpoint whose model config differs from `expected`.
pub fn load_expecting<T: Real>(dir: &Path, expected: &ModelConfig) -> Result<Checkpoint<T>> {
    let manifest = read_manifest(dir)?;
    if manifest.model.toggles != expected.toggles {
        return Err(Error::Integrity(format!(
            "checkpoint toggles {:?} do not match requested {:?}",
            manifest.model.toggles, expected.toggles
        )));
    }
    if &manifest.model != expected {
        return Err(Error::Integrity(
            "checkpoint model config differs from the requested one".into(),
        ));
    }
    load(dir)
}
