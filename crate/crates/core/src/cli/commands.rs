use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cells::CellParams;
use crate::data::{fit_scaler, load_trials, read_trial, split, PouringTrial};
use crate::error::{Error, Result};
use crate::loss::{LossKind, LossSums};
use crate::model::{init_params, param_count, predict_sequence, NetworkSpec, ParamSet};
use crate::synth::{generate, write_corpus, SynthConfig};

use super::checkpoint::{write_atomic, Checkpoint};
use super::config::TrainConfig;
use super::train::{prepare, train, EpochRow, MetricsLog, TrainObserver};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RESOLVED_CONFIG_FILE: &str = "config.json";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_synth(config: &SynthConfig, out: &Path) -> Result<usize> {
    if config.n_trials == 0 {
        return Err(Error::Config("--n must be at least 1".into()));
    }
    config.validate()?;
    let trials = generate(config)?;
    write_corpus(&trials, out)
}

/// Everything a finished training run leaves behind.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub checkpoint: Checkpoint,
    pub metrics: MetricsLog,
    pub checkpoint_path: PathBuf,
    pub metrics_path: PathBuf,
}

/// Streams metric rows to disk and rewrites the best checkpoint on each
/// improvement.
struct DiskObserver<'a> {
    metrics: fs::File,
    metrics_path: PathBuf,
    checkpoint_path: PathBuf,
    template: &'a Checkpoint,
}

impl TrainObserver for DiskObserver<'_> {
    fn on_epoch(&mut self, row: &EpochRow) -> Result<()> {
        writeln!(self.metrics, "{}", MetricsLog::csv_row(row))
            .and_then(|_| self.metrics.flush())
            .map_err(|e| Error::io(&self.metrics_path, e))
    }

    fn on_improvement(&mut self, row: &EpochRow, params: &ParamSet) -> Result<()> {
        Checkpoint {
            params: params.clone(),
            best_epoch: Some(row.epoch),
            best_val_loss: Some(row.val_loss),
            created: now(),
            ..self.template.clone()
        }
        .save(&self.checkpoint_path)
    }
}

/// Loads the corpus, splits and scales it, trains, and writes the best
/// checkpoint plus a per-epoch metrics CSV into the output directory.
pub fn cmd_train(config: &TrainConfig) -> Result<TrainRun> {
    config.validate()?;
    let data_path = config
        .data_path
        .as_deref()
        .ok_or_else(|| Error::Config("no corpus given (--corpus or data_path)".into()))?;
    let out = config
        .output_dir
        .as_deref()
        .ok_or_else(|| Error::Config("no output directory given (--out or output_dir)".into()))?;
    let trials = load_trials(data_path)?;
    if trials.is_empty() {
        return Err(Error::Degenerate(format!("no trials in {}", data_path.display())));
    }
    let (train_set, val_set) = if config.split_fraction >= 1.0 {
        (trials, Vec::new())
    } else {
        let s = split(&trials, config.split_fraction, config.seed)?;
        (s.train, s.val)
    };
    if train_set.is_empty() {
        return Err(Error::Degenerate("split left no training trials".into()));
    }
    let scaler = fit_scaler(&train_set)?;
    let train_prepared = prepare(&train_set, &scaler)?;
    let val_prepared = prepare(&val_set, &scaler)?;
    log::info!(
        "training {} parameters on {} trials, validating on {}",
        param_count(&config.network),
        train_set.len(),
        if val_set.is_empty() { train_set.len() } else { val_set.len() }
    );

    create_dir(out)?;
    let resolved = serde_json::to_string_pretty(config).expect("config serializes");
    write_atomic(&out.join(RESOLVED_CONFIG_FILE), resolved.as_bytes())?;
    let metrics_path = out.join(METRICS_FILE);
    let checkpoint_path = out.join(CHECKPOINT_FILE);
    let mut metrics_file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    writeln!(metrics_file, "{}", MetricsLog::HEADER).map_err(|e| Error::io(&metrics_path, e))?;

    let template = Checkpoint {
        spec: config.network.clone(),
        scaler,
        params: ParamSet::zeros(&config.network),
        best_epoch: None,
        best_val_loss: None,
        seed: config.seed,
        created: String::new(),
    };
    // The initial parameters are the fallback if training aborts before
    // any epoch completes.
    Checkpoint {
        params: init_params(&config.network, config.seed)?,
        created: now(),
        ..template.clone()
    }
    .save(&checkpoint_path)?;
    let mut observer = DiskObserver {
        metrics: metrics_file,
        metrics_path: metrics_path.clone(),
        checkpoint_path: checkpoint_path.clone(),
        template: &template,
    };
    let outcome = train(config, &train_prepared, &val_prepared, &mut observer)?;

    let checkpoint = Checkpoint {
        params: outcome.best_params,
        best_epoch: outcome.best_epoch,
        best_val_loss: outcome.best_val_loss,
        created: now(),
        ..template
    };
    Ok(TrainRun {
        checkpoint,
        metrics: outcome.metrics,
        checkpoint_path,
        metrics_path,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub trials: usize,
    pub timesteps: usize,
    pub mse: f64,
    pub rmse: f64,
    pub mae: f64,
    pub created: String,
}

pub fn evaluate_trials(checkpoint: &Checkpoint, trials: &[PouringTrial]) -> Result<LossSums> {
    if trials.is_empty() {
        return Err(Error::Degenerate("evaluation corpus is empty".into()));
    }
    let mut sums = LossSums::default();
    for trial in trials {
        let pred = predict_sequence(trial, &checkpoint.params, &checkpoint.scaler)?;
        sums.accumulate(&pred, &trial.f, &vec![1.0; pred.len()]);
    }
    Ok(sums)
}

/// Scores a checkpoint on a corpus and writes the JSON report to `report`
/// (default: beside the checkpoint).
pub fn cmd_eval(checkpoint_path: &Path, corpus: &Path, report: Option<&Path>) -> Result<(EvalReport, PathBuf)> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let trials = load_trials(corpus)?;
    let sums = evaluate_trials(&checkpoint, &trials)?;
    let result = EvalReport {
        checkpoint: checkpoint_path.to_path_buf(),
        corpus: corpus.to_path_buf(),
        trials: trials.len(),
        timesteps: sums.count as usize,
        mse: sums.value(LossKind::Mse)?,
        rmse: sums.value(LossKind::Rmse)?,
        mae: sums.value(LossKind::Mae)?,
        created: now(),
    };
    let path = match report {
        Some(p) => p.to_path_buf(),
        None => checkpoint_path.parent().unwrap_or(Path::new(".")).join(EVAL_REPORT_FILE),
    };
    let json = serde_json::to_string_pretty(&result).expect("report serializes");
    write_atomic(&path, json.as_bytes())?;
    Ok((result, path))
}

/// `t,f_true,f_pred` rows for one trial.
pub fn prediction_csv(trial: &PouringTrial, pred: &[f64]) -> String {
    let mut out = String::from("t,f_true,f_pred\n");
    for (t, (y, p)) in trial.f.iter().zip(pred).enumerate() {
        let _ = writeln!(out, "{t},{},{}", crate::data::format_f64(*y), crate::data::format_f64(*p));
    }
    out
}

pub fn cmd_predict(checkpoint_path: &Path, trial_path: &Path) -> Result<String> {
    let checkpoint = Checkpoint::load(checkpoint_path)?;
    let trial = read_trial(trial_path)?;
    let pred = predict_sequence(&trial, &checkpoint.params, &checkpoint.scaler)?;
    Ok(prediction_csv(&trial, &pred))
}

/// Per-layer table of kind, width and trainable parameters.
pub fn cmd_inspect(spec: &NetworkSpec) -> Result<String> {
    spec.validate()?;
    let mut out = String::new();
    let _ = writeln!(out, "{:<6} {:<10} {:>6} {:>6} {:>10}", "layer", "kind", "input", "units", "params");
    for (idx, (layer, input)) in spec.layer_shapes().enumerate() {
        let n = CellParams::count_for(layer.kind, input, layer.units, spec.gru_variant);
        let _ = writeln!(out, "{:<6} {:<10} {:>6} {:>6} {:>10}", idx, layer.kind.name(), input, layer.units, n);
    }
    let head = spec.head_dim * spec.last_units() + spec.head_dim;
    let _ = writeln!(out, "{:<6} {:<10} {:>6} {:>6} {:>10}", "head", "dense", spec.last_units(), spec.head_dim, head);
    let _ = writeln!(out, "total trainable parameters: {}", param_count(spec));
    Ok(out)
}
