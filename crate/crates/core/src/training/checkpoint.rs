//! Checkpoint directories: `config.json`, `labels.json`, `manifest.json`, `params.bin`.
//!
//! `params.bin` holds every parameter as little-endian `f32`, concatenated in
//! manifest order. Each manifest entry records the parameter name, its shape,
//! its byte offset into the blob and its parameter group.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, TrainConfig};
use crate::data::LabelMaps;
use crate::error::{Error, Result};
use crate::model::Ctran;
use crate::substrate::{ParamGroup, ParamStore};

pub const CONFIG_FILE: &str = "config.json";
pub const LABELS_FILE: &str = "labels.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into `params.bin`.
    pub offset: usize,
    pub group: ParamGroup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamManifest {
    pub params: Vec<ManifestEntry>,
    pub total_bytes: usize,
}

impl ParamManifest {
    pub fn describe(store: &ParamStore<f32>) -> Self {
        let mut offset = 0;
        let params = store
            .slots()
            .iter()
            .map(|s| {
                let e = ManifestEntry {
                    name: s.name.clone(),
                    shape: s.value.shape().to_vec(),
                    offset,
                    group: s.group,
                };
                offset += s.value.numel() * 4;
                e
            })
            .collect();
        ParamManifest { params, total_bytes: offset }
    }
}

/// A trained model together with everything needed to rebuild it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Ctran<f32>,
    pub train: TrainConfig,
    pub labels: LabelMaps,
}

impl Checkpoint {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let config = CheckpointConfig { model: self.model.config.clone(), train: self.train.clone() };
        write(dir.join(CONFIG_FILE), &serde_json::to_vec_pretty(&config)?)?;
        self.labels.save(dir.join(LABELS_FILE))?;
        save_params(&self.model.params, dir)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(CONFIG_FILE);
        let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let config: CheckpointConfig = serde_json::from_slice(&text)
            .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
        let labels = LabelMaps::load(dir.join(LABELS_FILE))?;
        let mut model = Ctran::new(&config.model, &labels, 0)?;
        load_params(&mut model.params, dir)?;
        Ok(Checkpoint { model, train: config.train, labels })
    }
}

fn write(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_params(store: &ParamStore<f32>, dir: &Path) -> Result<()> {
    let manifest = ParamManifest::describe(store);
    let mut blob = Vec::with_capacity(manifest.total_bytes);
    for s in store.slots() {
        for v in s.value.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    write(dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    write(dir.join(PARAMS_FILE), &blob)
}

/// Overwrites every parameter of `store` from a saved manifest and blob.
/// Names, shapes and groups must match exactly.
pub fn load_params(store: &mut ParamStore<f32>, dir: &Path) -> Result<()> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ParamManifest = serde_json::from_slice(&text)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    let path = dir.join(PARAMS_FILE);
    let blob = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if blob.len() != manifest.total_bytes {
        return Err(Error::Load(format!(
            "{} holds {} bytes, manifest expects {}",
            path.display(),
            blob.len(),
            manifest.total_bytes
        )));
    }
    if manifest.params.len() != store.len() {
        return Err(Error::Load(format!(
            "checkpoint has {} parameters, model config builds {}",
            manifest.params.len(),
            store.len()
        )));
    }
    for e in &manifest.params {
        let id = store
            .id(&e.name)
            .ok_or_else(|| Error::Load(format!("parameter {} is not part of this model", e.name)))?;
        let slot = store.get_mut(id);
        if slot.value.shape() != e.shape.as_slice() || slot.group != e.group {
            return Err(Error::Load(format!(
                "parameter {}: checkpoint {:?} ({}), model {:?} ({})",
                e.name,
                e.shape,
                e.group,
                slot.value.shape(),
                slot.group
            )));
        }
        let n = slot.value.numel();
        let bytes = blob
            .get(e.offset..e.offset + 4 * n)
            .ok_or_else(|| Error::Load(format!("parameter {} lies outside {PARAMS_FILE}", e.name)))?;
        for (v, b) in slot.value.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic;

    fn checkpoint(config: &ModelConfig) -> Checkpoint {
        let train = synthetic::corpus(8, 3);
        let labels = LabelMaps::build(&train).unwrap();
        Checkpoint { model: Ctran::new(config, &labels, 5).unwrap(), train: TrainConfig::default(), labels }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint(&ModelConfig::tiny());
        ck.save(dir.path()).unwrap();
        let back = Checkpoint::load(dir.path()).unwrap();
        assert_eq!(back.train, ck.train);
        assert_eq!(back.labels, ck.labels);
        for (a, b) in ck.model.params.slots().iter().zip(back.model.params.slots()) {
            assert_eq!(a.name, b.name);
            let bits = |s: &[f32]| s.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a.value.data()), bits(b.value.data()), "{}", a.name);
        }
    }

    #[test]
    fn mismatched_config_is_a_load_error() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint(&ModelConfig::tiny());
        save_params(&ck.model.params, dir.path()).unwrap();
        let mut other = ModelConfig::tiny();
        other.slot.ffn_dim += 4;
        let mut model = Ctran::<f32>::new(&other, &ck.labels, 0).unwrap();
        let err = load_params(&mut model.params, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Load(_)), "{err}");
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let ck = checkpoint(&ModelConfig::tiny());
        ck.save(dir.path()).unwrap();
        let p = dir.path().join(PARAMS_FILE);
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(Checkpoint::load(dir.path()), Err(Error::Load(_))));
    }
}
