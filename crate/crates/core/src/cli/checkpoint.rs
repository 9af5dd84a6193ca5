//! Checkpoints: a JSON manifest next to a flat little-endian `f64` parameter
//! file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ScalerParams;
use crate::error::{Error, Result};
use crate::model::{param_count, NetworkSpec, ParamSet};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub spec: NetworkSpec,
    pub scaler: ScalerParams,
    pub param_count: usize,
    /// Parameter file name, relative to the manifest's directory.
    pub params_file: String,
    pub best_epoch: Option<u32>,
    pub best_val_loss: Option<f64>,
    pub seed: u64,
    pub created: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub scaler: ScalerParams,
    pub params: ParamSet,
    pub best_epoch: Option<u32>,
    pub best_val_loss: Option<f64>,
    pub seed: u64,
    pub created: String,
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn encode_params(params: &ParamSet) -> Vec<u8> {
    params.to_flat().iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_params(spec: &NetworkSpec, bytes: &[u8], path: &Path) -> Result<ParamSet> {
    let expected = param_count(spec) * 8;
    if bytes.len() != expected {
        return Err(Error::Validation {
            path: path.to_path_buf(),
            line: 0,
            msg: format!("parameter file has {} bytes, spec needs {expected}", bytes.len()),
        });
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    ParamSet::from_flat(spec, &flat)
}

impl Checkpoint {
    pub fn manifest(&self, params_file: &str) -> Manifest {
        Manifest {
            format_version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            scaler: self.scaler.clone(),
            param_count: param_count(&self.spec),
            params_file: params_file.to_string(),
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss,
            seed: self.seed,
            created: self.created.clone(),
        }
    }

    /// Saves the manifest at `path` and the parameters beside it with a
    /// `.bin` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        if !self.params.matches(&self.spec) {
            return Err(Error::Config("checkpoint parameters do not match its spec".into()));
        }
        let bin_path = path.with_extension("bin");
        let bin_name = bin_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Config(format!("bad checkpoint path {}", path.display())))?
            .to_string();
        write_atomic(&bin_path, &encode_params(&self.params))?;
        let json = serde_json::to_string_pretty(&self.manifest(&bin_name)).expect("manifest serializes");
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let version: serde_json::Value = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let found = version.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let manifest: Manifest = serde_json::from_value(version).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        manifest.spec.validate()?;
        if manifest.param_count != param_count(&manifest.spec) {
            return Err(Error::Config(format!(
                "manifest claims {} parameters, spec implies {}",
                manifest.param_count,
                param_count(&manifest.spec)
            )));
        }
        let bin_path = path.parent().unwrap_or(Path::new(".")).join(&manifest.params_file);
        let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
        let params = decode_params(&manifest.spec, &bytes, &bin_path)?;
        Ok(Checkpoint {
            spec: manifest.spec,
            scaler: manifest.scaler,
            params,
            best_epoch: manifest.best_epoch,
            best_val_loss: manifest.best_val_loss,
            seed: manifest.seed,
            created: manifest.created,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cells::CellKind;
    use crate::model::init_params;

    fn sample() -> Checkpoint {
        let spec = NetworkSpec::uniform(CellKind::Lstm, &[4, 3]);
        Checkpoint {
            params: init_params(&spec, 5).unwrap(),
            spec,
            scaler: ScalerParams {
                mu: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6],
                s: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            },
            best_epoch: Some(3),
            best_val_loss: Some(0.1 + 0.2),
            seed: 9,
            created: "2024-01-01T00:00:00Z".into(),
        }
    }

    #[test]
    fn save_load_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let ck = sample();
        ck.save(&path).unwrap();
        assert!(dir.path().join("checkpoint.bin").exists());
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    }

    #[test]
    fn version_gate() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        sample().save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Version { found: 99, .. })));
    }

    #[test]
    fn truncated_params_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        sample().save(&path).unwrap();
        let bin = dir.path().join("checkpoint.bin");
        let bytes = fs::read(&bin).unwrap();
        fs::write(&bin, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Validation { .. })));
    }
}
