//! Masked regression losses averaged over real timesteps batch-wide.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mse,
    Rmse,
    Mae,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Rmse => "rmse",
            LossKind::Mae => "mae",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(LossKind::Mse),
            "rmse" => Ok(LossKind::Rmse),
            "mae" => Ok(LossKind::Mae),
            other => Err(Error::Config(format!("unknown loss `{other}`"))),
        }
    }
}

fn check(pred: &[f64], target: &[f64], mask: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() != mask.len() {
        return Err(Error::shape(
            "masked_loss",
            format!("pred {} / target {}", pred.len(), target.len()),
            format!("mask {}", mask.len()),
        ));
    }
    let n: f64 = mask.iter().sum();
    if n < 1.0 {
        return Err(Error::Degenerate("mask selects no timesteps".into()));
    }
    Ok(n)
}

/// Running sums of a masked loss, for accumulating over several batches.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossSums {
    pub squared: f64,
    pub absolute: f64,
    pub count: f64,
}

impl LossSums {
    pub fn accumulate(&mut self, pred: &[f64], target: &[f64], mask: &[f64]) {
        for ((p, y), m) in pred.iter().zip(target).zip(mask) {
            if *m != 0.0 {
                let r = p - y;
                self.squared += r * r;
                self.absolute += r.abs();
                self.count += 1.0;
            }
        }
    }

    pub fn merge(&mut self, other: &LossSums) {
        self.squared += other.squared;
        self.absolute += other.absolute;
        self.count += other.count;
    }

    pub fn value(&self, kind: LossKind) -> Result<f64> {
        if self.count < 1.0 {
            return Err(Error::Degenerate("no timesteps to average over".into()));
        }
        Ok(match kind {
            LossKind::Mse => self.squared / self.count,
            LossKind::Rmse => (self.squared / self.count).sqrt(),
            LossKind::Mae => self.absolute / self.count,
        })
    }
}

pub fn masked_loss(pred: &[f64], target: &[f64], mask: &[f64], kind: LossKind) -> Result<f64> {
    check(pred, target, mask)?;
    let mut sums = LossSums::default();
    sums.accumulate(pred, target, mask);
    sums.value(kind)
}

pub fn masked_loss_grad(pred: &[f64], target: &[f64], mask: &[f64], kind: LossKind) -> Result<Vec<f64>> {
    let n = check(pred, target, mask)?;
    let residual = |i: usize| pred[i] - target[i];
    let grad = match kind {
        LossKind::Mse => (0..pred.len())
            .map(|i| if mask[i] != 0.0 { 2.0 * residual(i) / n } else { 0.0 })
            .collect(),
        LossKind::Mae => (0..pred.len())
            .map(|i| {
                let r = residual(i);
                if mask[i] == 0.0 || r == 0.0 {
                    0.0
                } else {
                    r.signum() / n
                }
            })
            .collect(),
        LossKind::Rmse => {
            let rmse = masked_loss(pred, target, mask, LossKind::Rmse)?;
            if rmse == 0.0 {
                return Err(Error::Degenerate("RMSE gradient undefined at zero loss".into()));
            }
            (0..pred.len())
                .map(|i| if mask[i] != 0.0 { residual(i) / (n * rmse) } else { 0.0 })
                .collect()
        }
    };
    Ok(grad)
}
