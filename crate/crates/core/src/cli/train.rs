//! Epoch loop: seeded reshuffle, mini-batch BPTT, optimizer step, full
//! validation pass, best-epoch tracking.

use std::fmt::Write as _;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{PouringTrial, ScalerParams};
use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSums};
use crate::batched::{backward_batch, forward_batch};
use crate::model::{init_params, Mode, ParamSet, INPUT_DIM};
use crate::optim::Optimizer;

use super::config::TrainConfig;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRow {
    pub epoch: u32,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<EpochRow>,
}

impl MetricsLog {
    pub const HEADER: &'static str = "epoch,train_loss,val_loss,lr,seconds";

    pub fn csv_row(row: &EpochRow) -> String {
        format!("{},{:e},{:e},{:e},{:.6}", row.epoch, row.train_loss, row.val_loss, row.lr, row.seconds)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for row in &self.rows {
            let _ = writeln!(out, "{}", Self::csv_row(row));
        }
        out
    }

    pub fn best(&self) -> Option<&EpochRow> {
        self.rows.iter().min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
    }
}

/// A trial with its inputs already standardized, flattened `len × 6`.
#[derive(Clone, Debug)]
pub struct PreparedTrial {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

pub fn prepare(trials: &[PouringTrial], scaler: &ScalerParams) -> Result<Vec<PreparedTrial>> {
    trials
        .iter()
        .map(|t| {
            Ok(PreparedTrial {
                inputs: scaler.transform(t)?.into_iter().flatten().collect(),
                targets: t.f.clone(),
            })
        })
        .collect()
}

/// SplitMix64 finalizer, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Loss and summed parameter gradient of one mini-batch. The loss is
/// averaged over every real timestep in the batch.
pub fn batch_gradient(params: &ParamSet, batch: &[&PreparedTrial], kind: LossKind, mode: Mode) -> Result<(LossSums, ParamSet)> {
    let n: usize = batch.iter().map(|t| t.targets.len()).sum();
    if n == 0 {
        return Err(Error::Degenerate("batch has no real timesteps".into()));
    }
    let n = n as f64;
    let inputs: Vec<&[f64]> = batch.iter().map(|t| t.inputs.as_slice()).collect();
    let targets: Vec<&[f64]> = batch.iter().map(|t| t.targets.as_slice()).collect();
    let tape = forward_batch(params, &inputs, mode)?;
    let y = tape.pack(&targets)?;
    let pred = tape.packed_predictions();
    let mut sums = LossSums::default();
    sums.accumulate(pred, &y, &vec![1.0; y.len()]);
    let step_grads: Vec<f64> = pred
        .iter()
        .zip(&y)
        .map(|(p, y)| {
            let r = p - y;
            match kind {
                LossKind::Mse => 2.0 * r / n,
                LossKind::Rmse => r / n,
                LossKind::Mae if r == 0.0 => 0.0,
                LossKind::Mae => r.signum() / n,
            }
        })
        .collect();
    let mut grads = params.zeros_like();
    backward_batch(params, &tape, &step_grads, &mut grads)?;
    if kind == LossKind::Rmse {
        let rmse = sums.value(LossKind::Rmse)?;
        if rmse > 0.0 {
            grads.scale(1.0 / rmse);
        } else {
            grads.scale(0.0);
        }
    }
    Ok((sums, grads))
}

/// Trials scored per lockstep pass during evaluation.
const EVAL_CHUNK: usize = 32;

/// Eval-mode loss sums over a set of trials.
pub fn evaluate(params: &ParamSet, trials: &[PreparedTrial]) -> Result<LossSums> {
    let mut sums = LossSums::default();
    for chunk in trials.chunks(EVAL_CHUNK) {
        let inputs: Vec<&[f64]> = chunk.iter().map(|t| t.inputs.as_slice()).collect();
        let targets: Vec<&[f64]> = chunk.iter().map(|t| t.targets.as_slice()).collect();
        let tape = forward_batch(params, &inputs, Mode::Eval)?;
        let y = tape.pack(&targets)?;
        sums.accumulate(tape.packed_predictions(), &y, &vec![1.0; y.len()]);
    }
    Ok(sums)
}

fn clip_global_norm(grads: &mut [f64], max_norm: f64) {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let factor = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= factor);
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_params: ParamSet,
    pub final_params: ParamSet,
    pub metrics: MetricsLog,
    pub best_epoch: Option<u32>,
    pub best_val_loss: Option<f64>,
}

/// Observer hooks for a training run.
pub trait TrainObserver {
    fn on_epoch(&mut self, _row: &EpochRow) -> Result<()> {
        Ok(())
    }

    /// Called after an epoch whose validation loss beat every earlier one.
    fn on_improvement(&mut self, _row: &EpochRow, _params: &ParamSet) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Trains from freshly initialized parameters. Validation runs over `val`,
/// or over `train` when `val` is empty.
pub fn train(config: &TrainConfig, train: &[PreparedTrial], val: &[PreparedTrial], observer: &mut dyn TrainObserver) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Degenerate("training set is empty".into()));
    }
    if let Some(t) = train.iter().chain(val).find(|t| t.inputs.len() != t.targets.len() * INPUT_DIM) {
        return Err(Error::shape("train", "len x 6 inputs", t.inputs.len()));
    }
    let val = if val.is_empty() { train } else { val };
    let mut params = init_params(&config.network, config.seed)?;
    let mut flat = params.to_flat();
    let mut optimizer = Optimizer::new(config.optimizer, flat.len());
    let mut best: Option<(u32, f64, ParamSet)> = None;
    let mut metrics = MetricsLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.schedule.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, 1, epoch as u64));
        order.shuffle(&mut rng);
        let mut epoch_sums = LossSums::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&PreparedTrial> = chunk.iter().map(|&i| &train[i]).collect();
            let mode = Mode::Train {
                dropout_rate: config.network.dropout_rate,
                seed: mix_seed(config.seed, 2 + epoch as u64, b as u64),
            };
            let (sums, grads) = batch_gradient(&params, &batch, config.loss, mode)?;
            let batch_loss = sums.value(config.loss)?;
            if !batch_loss.is_finite() {
                return Err(Error::Numerical(format!("non-finite training loss at epoch {epoch}, batch {b}")));
            }
            epoch_sums.merge(&sums);
            let mut g = grads.to_flat();
            if let Some(max_norm) = config.clip_norm {
                clip_global_norm(&mut g, max_norm);
            }
            optimizer.step(&mut flat, &g, lr).map_err(|e| match e {
                Error::PoisonedUpdate { index } => Error::Numerical(format!("non-finite gradient (parameter {index}) at epoch {epoch}, batch {b}")),
                other => other,
            })?;
            if flat.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("parameters diverged at epoch {epoch}, batch {b}")));
            }
            params.assign_flat(&flat)?;
        }
        let val_loss = evaluate(&params, val)?.value(config.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Numerical(format!("non-finite validation loss at epoch {epoch}")));
        }
        let row = EpochRow {
            epoch,
            train_loss: epoch_sums.value(config.loss)?,
            val_loss,
            lr,
            seconds: started.elapsed().as_secs_f64(),
        };
        metrics.rows.push(row);
        observer.on_epoch(&row)?;
        if best.as_ref().is_none_or(|(_, loss, _)| val_loss < *loss) {
            observer.on_improvement(&row, &params)?;
            best = Some((epoch, val_loss, params.clone()));
        }
        log::info!("epoch {epoch}: train {:.4e} val {val_loss:.4e} lr {lr:.2e}", row.train_loss);
    }

    let (best_epoch, best_val_loss, best_params) = match best {
        Some((e, l, p)) => (Some(e), Some(l), p),
        None => (None, None, params.clone()),
    };
    Ok(TrainOutcome {
        best_params,
        final_params: params,
        metrics,
        best_epoch,
        best_val_loss,
    })
}
