//! Pouring trials: CSV ingestion, standardization of the six input features,
//! zero post-padding into batches, and the seeded train/validation split.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PaddedBatch, INPUT_DIM, MAX_STEPS};

/// Column order of the trial CSV format.
pub const CSV_HEADER: [&str; 7] = ["theta", "f", "f_init", "f_target", "h_cup", "d_cup", "theta_dot"];

/// One pouring motion. `theta` is in degrees, weights in lbf, cup sizes in
/// mm, `theta_dot` in rad/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PouringTrial {
    pub theta: Vec<f64>,
    pub f: Vec<f64>,
    pub f_init: f64,
    pub f_target: f64,
    pub h_cup: f64,
    pub d_cup: f64,
    pub theta_dot: Vec<f64>,
}

impl PouringTrial {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Input rows `[θ, f_init, f_target, h_cup, d_cup, θ̇]`, one per timestep.
    pub fn feature_rows(&self) -> Vec<[f64; INPUT_DIM]> {
        (0..self.len())
            .map(|t| [self.theta[t], self.f_init, self.f_target, self.h_cup, self.d_cup, self.theta_dot[t]])
            .collect()
    }

    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.f.len();
        if self.theta.len() != n || self.theta_dot.len() != n {
            return Err(format!(
                "series lengths differ: theta {}, f {}, theta_dot {}",
                self.theta.len(),
                n,
                self.theta_dot.len()
            ));
        }
        if n > MAX_STEPS {
            return Err(format!("trial has {n} steps, maximum is {MAX_STEPS}"));
        }
        let constants = [self.f_init, self.f_target, self.h_cup, self.d_cup];
        if !constants.iter().chain(&self.theta).chain(&self.f).chain(&self.theta_dot).all(|v| v.is_finite()) {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

fn validation(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Validation {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Reads one trial CSV.
pub fn read_trial(path: &Path) -> Result<PouringTrial> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| validation(path, 1, e.to_string()))?;
    let header = reader.headers().map_err(|e| validation(path, 1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
        return Err(validation(path, 1, format!("expected header `{}`, found `{}`", CSV_HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }

    let mut trial = PouringTrial {
        theta: Vec::new(),
        f: Vec::new(),
        f_init: 0.0,
        f_target: 0.0,
        h_cup: 0.0,
        d_cup: 0.0,
        theta_dot: Vec::new(),
    };
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            validation(path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut row = [0.0; 7];
        for (i, field) in record.iter().enumerate() {
            let value: f64 = field
                .trim()
                .parse()
                .map_err(|_| validation(path, line, format!("column `{}`: cannot parse `{field}`", CSV_HEADER[i])))?;
            if !value.is_finite() {
                return Err(validation(path, line, format!("column `{}`: non-finite value `{field}`", CSV_HEADER[i])));
            }
            row[i] = value;
        }
        let [theta, f, f_init, f_target, h_cup, d_cup, theta_dot] = row;
        if trial.f.is_empty() {
            trial.f_init = f_init;
            trial.f_target = f_target;
            trial.h_cup = h_cup;
            trial.d_cup = d_cup;
        } else {
            let constants = [(trial.f_init, f_init, "f_init"), (trial.f_target, f_target, "f_target"), (trial.h_cup, h_cup, "h_cup"), (trial.d_cup, d_cup, "d_cup")];
            if let Some((_, _, name)) = constants.iter().find(|(a, b, _)| a != b) {
                return Err(validation(path, line, format!("column `{name}` must be constant within a trial")));
            }
        }
        trial.theta.push(theta);
        trial.f.push(f);
        trial.theta_dot.push(theta_dot);
        if trial.f.len() > MAX_STEPS {
            return Err(validation(path, line, format!("trial longer than {MAX_STEPS} steps")));
        }
    }
    if trial.is_empty() {
        return Err(validation(path, 2, "no data rows"));
    }
    Ok(trial)
}

/// Loads every `*.csv` in `dir`, in lexicographic file-name order.
pub fn load_trials(dir: &Path) -> Result<Vec<PouringTrial>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|entry| entry.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_trial(p)).collect()
}

/// Formats with 17 significant digits so the value parses back bit-exactly.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_trial(path: &Path, trial: &PouringTrial) -> Result<()> {
    trial
        .check_invariants()
        .map_err(|msg| validation(path, 0, msg))?;
    let mut out = String::with_capacity(64 + trial.len() * 7 * 24);
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    for t in 0..trial.len() {
        let row = [trial.theta[t], trial.f[t], trial.f_init, trial.f_target, trial.h_cup, trial.d_cup, trial.theta_dot[t]];
        let cells: Vec<String> = row.iter().map(|v| format_f64(*v)).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Per-feature mean and population standard deviation of the input rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub mu: Vec<f64>,
    pub s: Vec<f64>,
}

impl ScalerParams {
    fn check(&self) -> Result<()> {
        if self.mu.len() != INPUT_DIM || self.s.len() != INPUT_DIM {
            return Err(Error::shape("scaler", INPUT_DIM, format!("mu {} / s {}", self.mu.len(), self.s.len())));
        }
        Ok(())
    }

    pub fn transform_rows(&self, rows: &[[f64; INPUT_DIM]]) -> Result<Vec<[f64; INPUT_DIM]>> {
        self.check()?;
        Ok(rows
            .iter()
            .map(|r| std::array::from_fn(|i| (r[i] - self.mu[i]) / self.s[i]))
            .collect())
    }

    pub fn transform(&self, trial: &PouringTrial) -> Result<Vec<[f64; INPUT_DIM]>> {
        self.transform_rows(&trial.feature_rows())
    }

    pub fn inverse_transform(&self, scaled: &[[f64; INPUT_DIM]]) -> Result<Vec<[f64; INPUT_DIM]>> {
        self.check()?;
        Ok(scaled
            .iter()
            .map(|z| std::array::from_fn(|i| z[i] * self.s[i] + self.mu[i]))
            .collect())
    }
}

/// Fits the scaler over every real timestep of `train`. A feature with no
/// spread gets `s = 1`.
pub fn fit_scaler(train: &[PouringTrial]) -> Result<ScalerParams> {
    let total: usize = train.iter().map(PouringTrial::len).sum();
    if train.is_empty() || total < 2 {
        return Err(Error::Degenerate(format!("scaler needs at least two timesteps, got {total}")));
    }
    let n = total as f64;
    let mut mu = vec![0.0; INPUT_DIM];
    for trial in train {
        for row in trial.feature_rows() {
            for i in 0..INPUT_DIM {
                mu[i] += row[i];
            }
        }
    }
    mu.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; INPUT_DIM];
    for trial in train {
        for row in trial.feature_rows() {
            for i in 0..INPUT_DIM {
                let d = row[i] - mu[i];
                var[i] += d * d;
            }
        }
    }
    let s = var
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let s = (v / n).sqrt();
            if s > 1e-12 * mu[i].abs().max(1.0) {
                s
            } else {
                log::warn!("feature {i} is constant over the training set; leaving it unscaled");
                1.0
            }
        })
        .collect();
    Ok(ScalerParams { mu, s })
}

/// Scales and zero-pads trials into batches of at most `batch_size`,
/// padded to `steps` timesteps. Targets stay in raw units.
pub fn pad_and_batch_to(trials: &[PouringTrial], scaler: &ScalerParams, batch_size: usize, steps: usize) -> Result<Vec<PaddedBatch>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    trials
        .chunks(batch_size)
        .map(|chunk| {
            let inputs: Vec<Vec<f64>> = chunk
                .iter()
                .map(|t| scaler.transform(t).map(|rows| rows.into_iter().flatten().collect()))
                .collect::<Result<_>>()?;
            let seqs: Vec<(&[f64], &[f64])> = inputs.iter().zip(chunk).map(|(x, t)| (x.as_slice(), t.f.as_slice())).collect();
            PaddedBatch::from_sequences(steps, INPUT_DIM, &seqs)
        })
        .collect()
}

pub fn pad_and_batch(trials: &[PouringTrial], scaler: &ScalerParams, batch_size: usize) -> Result<Vec<PaddedBatch>> {
    pad_and_batch_to(trials, scaler, batch_size, MAX_STEPS)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<PouringTrial>,
    pub val: Vec<PouringTrial>,
    pub seed: u64,
}

/// Index permutation used by [`split`]: seeded Fisher–Yates shuffle.
pub fn shuffled_indices(n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx
}

/// Number of trials that go to training for a given fraction.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((fraction * n as f64).floor() as usize).min(n)
}

pub fn split(trials: &[PouringTrial], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction {fraction} outside (0, 1)")));
    }
    let order = shuffled_indices(trials.len(), seed);
    let k = train_count(trials.len(), fraction);
    Ok(DatasetSplit {
        train: order[..k].iter().map(|&i| trials[i].clone()).collect(),
        val: order[k..].iter().map(|&i| trials[i].clone()).collect(),
        seed,
    })
}
