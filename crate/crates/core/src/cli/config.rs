use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::NetworkSpec;
use crate::optim::{LrSchedule, OptimizerConfig};

fn d_epochs() -> u32 {
    1500
}
fn d_batch_size() -> usize {
    32
}
fn d_split_fraction() -> f64 {
    0.8
}

/// Training run configuration. Omitted fields take the best-model defaults:
/// seven-layer GRU, Adam (β₁ 0.9, β₂ 0.999, ε 1e-9), batch 32, constant
/// learning rate 1e-3, 1500 epochs, MSE.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub schedule: LrSchedule,
    #[serde(default = "d_epochs")]
    pub epochs: u32,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub data_path: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub loss: LossKind,
    /// Training share of the corpus. `1.0` trains on everything and
    /// validates on the training set itself.
    #[serde(default = "d_split_fraction")]
    pub split_fraction: f64,
    /// Global-norm gradient clipping; off when absent.
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkSpec::default(),
            optimizer: OptimizerConfig::default(),
            schedule: LrSchedule::default(),
            epochs: d_epochs(),
            batch_size: d_batch_size(),
            seed: 0,
            data_path: None,
            output_dir: None,
            loss: LossKind::Mse,
            split_fraction: d_split_fraction(),
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(text).map_err(|source| Error::Json {
            path: origin.to_path_buf(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::from_json(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::Config(format!("split_fraction {} outside (0, 1]", self.split_fraction)));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip_norm {c} must be positive")));
            }
        }
        Ok(())
    }
}
