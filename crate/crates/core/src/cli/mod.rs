//! Command-line front end: corpus generation, training, evaluation,
//! prediction export and architecture inspection.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod train;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::cells::CellKind;
use crate::error::{Error, Result};
use crate::model::{LayerSpec, NetworkSpec};
use crate::synth::SynthConfig;

pub use checkpoint::Checkpoint;
pub use commands::{cmd_eval, cmd_inspect, cmd_predict, cmd_synth, cmd_train, EvalReport, TrainRun};
pub use config::TrainConfig;
pub use train::{EpochRow, MetricsLog};

#[derive(Debug, Parser)]
#[command(name = "pourdyn", version, about = "Recurrent models of pouring dynamics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus of pouring trials.
    Synth(SynthArgs),
    /// Train a network and write checkpoint + metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Export ground truth and prediction for one trial as CSV.
    Predict(PredictArgs),
    /// Print the layer table and parameter count of a network.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Synthesis config (JSON); flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Network selection shared by `train` and `inspect`.
#[derive(Debug, Args)]
pub struct NetworkArgs {
    /// `design1` … `design8`.
    #[arg(long, conflicts_with = "layers")]
    pub design: Option<String>,
    /// Free-form comma-separated layer widths, e.g. `64,32`.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Cell kind: simplernn, lstm or gru.
    #[arg(long)]
    pub kind: Option<CellKind>,
}

impl NetworkArgs {
    /// Applies the flags on top of `base`; `None` when no flag was given.
    fn resolve(&self, base: &NetworkSpec) -> Result<Option<NetworkSpec>> {
        let kind = self.kind;
        let mut spec = match (&self.design, &self.layers) {
            (Some(name), _) => NetworkSpec::named(name, kind.unwrap_or(CellKind::Gru))?,
            (None, Some(units)) => NetworkSpec::uniform(kind.unwrap_or(CellKind::Gru), units),
            (None, None) => match kind {
                Some(k) => NetworkSpec {
                    layers: base.layers.iter().map(|l| LayerSpec { kind: k, units: l.units }).collect(),
                    ..base.clone()
                },
                None => return Ok(None),
            },
        };
        spec.gru_variant = base.gru_variant;
        spec.dropout_rate = base.dropout_rate;
        Ok(Some(spec))
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[command(flatten)]
    pub network: NetworkArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Report path; defaults to `eval_report.json` beside the checkpoint.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub trial: PathBuf,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Read the network from a training config instead.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub network: NetworkArgs,
}

pub fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(spec) = args.network.resolve(&config.network)? {
        config.network = spec;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    if let Some(corpus) = &args.corpus {
        config.data_path = Some(corpus.clone());
    }
    if let Some(out) = &args.out {
        config.output_dir = Some(out.clone());
    }
    config.validate()?;
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let mut config = match &args.config {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                    serde_json::from_str(&text).map_err(|source| Error::Json {
                        path: path.clone(),
                        source,
                    })?
                }
                None => SynthConfig::default(),
            };
            if let Some(n) = args.n {
                config.n_trials = n;
            }
            if let Some(seed) = args.seed {
                config.seed = seed;
            }
            let n = cmd_synth(&config, &args.out)?;
            println!("wrote {n} trials to {}", args.out.display());
        }
        Command::Train(args) => {
            let config = train_config(&args)?;
            let run = cmd_train(&config)?;
            match (run.checkpoint.best_epoch, run.checkpoint.best_val_loss) {
                (Some(e), Some(l)) => println!("best epoch {e}, validation loss {l:e}"),
                _ => println!("no epochs run; saved initial parameters"),
            }
            println!("checkpoint: {}", run.checkpoint_path.display());
            println!("metrics: {}", run.metrics_path.display());
        }
        Command::Eval(args) => {
            let (report, path) = cmd_eval(&args.checkpoint, &args.corpus, args.out.as_deref())?;
            println!("trials {}  timesteps {}", report.trials, report.timesteps);
            println!("mse  {:e}", report.mse);
            println!("rmse {:e}", report.rmse);
            println!("mae  {:e}", report.mae);
            println!("report: {}", path.display());
        }
        Command::Predict(args) => {
            let csv = cmd_predict(&args.checkpoint, &args.trial)?;
            match &args.out {
                Some(path) => checkpoint::write_atomic(path, csv.as_bytes())?,
                None => print!("{csv}"),
            }
        }
        Command::Inspect(args) => {
            let base = match &args.config {
                Some(path) => TrainConfig::load(path)?.network,
                None => NetworkSpec::default(),
            };
            let spec = args.network.resolve(&base)?.unwrap_or(base);
            print!("{}", cmd_inspect(&spec)?);
        }
    }
    Ok(())
}
