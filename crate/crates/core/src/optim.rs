//! First-order optimizers over flat parameter vectors, and epoch-wise
//! learning-rate schedules.
//!
//! Update rules follow the forms used by mainstream toolkits: bias-corrected
//! Adam, Adamax with an infinity-norm second moment, Adadelta with squared
//! gradient and squared update accumulators scaled by the learning rate,
//! uncentered RMSprop, Adagrad with a non-zero initial accumulator, and SGD
//! with classical (non-Nesterov) momentum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn d_adam_beta_1() -> f64 {
    0.9
}
fn d_adam_beta_2() -> f64 {
    0.999
}
fn d_adam_eps() -> f64 {
    1e-9
}
fn d_adamax_eps() -> f64 {
    1e-7
}
fn d_adadelta_rho() -> f64 {
    0.95
}
fn d_adadelta_eps() -> f64 {
    1e-9
}
fn d_adagrad_eps() -> f64 {
    1e-8
}
fn d_adagrad_init() -> f64 {
    0.1
}
fn d_rmsprop_rho() -> f64 {
    0.9
}
fn d_rmsprop_eps() -> f64 {
    1e-8
}
fn d_sgd_momentum() -> f64 {
    0.9
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        #[serde(default = "d_sgd_momentum")]
        momentum: f64,
        #[serde(default)]
        nesterov: bool,
    },
    Adam {
        #[serde(default = "d_adam_beta_1")]
        beta_1: f64,
        #[serde(default = "d_adam_beta_2")]
        beta_2: f64,
        #[serde(default = "d_adam_eps")]
        epsilon: f64,
    },
    Adamax {
        #[serde(default = "d_adam_beta_1")]
        beta_1: f64,
        #[serde(default = "d_adam_beta_2")]
        beta_2: f64,
        #[serde(default = "d_adamax_eps")]
        epsilon: f64,
    },
    Adagrad {
        #[serde(default = "d_adagrad_eps")]
        epsilon: f64,
        #[serde(default = "d_adagrad_init")]
        initial_accumulator: f64,
    },
    Adadelta {
        #[serde(default = "d_adadelta_rho")]
        rho: f64,
        #[serde(default = "d_adadelta_eps")]
        epsilon: f64,
    },
    RmsProp {
        #[serde(default = "d_rmsprop_rho")]
        rho: f64,
        #[serde(default)]
        momentum: f64,
        #[serde(default = "d_rmsprop_eps")]
        epsilon: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::adam()
    }
}

impl OptimizerConfig {
    pub fn sgd() -> Self {
        OptimizerConfig::Sgd {
            momentum: d_sgd_momentum(),
            nesterov: false,
        }
    }

    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta_1: d_adam_beta_1(),
            beta_2: d_adam_beta_2(),
            epsilon: d_adam_eps(),
        }
    }

    pub fn adamax() -> Self {
        OptimizerConfig::Adamax {
            beta_1: d_adam_beta_1(),
            beta_2: d_adam_beta_2(),
            epsilon: d_adamax_eps(),
        }
    }

    pub fn adagrad() -> Self {
        OptimizerConfig::Adagrad {
            epsilon: d_adagrad_eps(),
            initial_accumulator: d_adagrad_init(),
        }
    }

    pub fn adadelta() -> Self {
        OptimizerConfig::Adadelta {
            rho: d_adadelta_rho(),
            epsilon: d_adadelta_eps(),
        }
    }

    pub fn rmsprop() -> Self {
        OptimizerConfig::RmsProp {
            rho: d_rmsprop_rho(),
            momentum: 0.0,
            epsilon: d_rmsprop_eps(),
        }
    }

    /// All six optimizers with their default hyperparameters.
    pub fn all_defaults() -> [OptimizerConfig; 6] {
        [
            OptimizerConfig::adadelta(),
            OptimizerConfig::adagrad(),
            OptimizerConfig::adam(),
            OptimizerConfig::adamax(),
            OptimizerConfig::rmsprop(),
            OptimizerConfig::sgd(),
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd { .. } => "sgd",
            OptimizerConfig::Adam { .. } => "adam",
            OptimizerConfig::Adamax { .. } => "adamax",
            OptimizerConfig::Adagrad { .. } => "adagrad",
            OptimizerConfig::Adadelta { .. } => "adadelta",
            OptimizerConfig::RmsProp { .. } => "rmsprop",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{} {name} = {v} outside [0, 1)", self.name())))
            }
        };
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{} {name} = {v} must be positive", self.name())))
            }
        };
        match *self {
            OptimizerConfig::Sgd { momentum, nesterov } => {
                if nesterov {
                    return Err(Error::Config("nesterov momentum is not supported".into()));
                }
                unit("momentum", momentum)
            }
            OptimizerConfig::Adam { beta_1, beta_2, epsilon } | OptimizerConfig::Adamax { beta_1, beta_2, epsilon } => {
                unit("beta_1", beta_1)?;
                unit("beta_2", beta_2)?;
                positive("epsilon", epsilon)
            }
            OptimizerConfig::Adagrad { epsilon, initial_accumulator } => {
                positive("epsilon", epsilon)?;
                if initial_accumulator < 0.0 {
                    return Err(Error::Config("adagrad initial_accumulator must be non-negative".into()));
                }
                Ok(())
            }
            OptimizerConfig::Adadelta { rho, epsilon } => {
                unit("rho", rho)?;
                positive("epsilon", epsilon)
            }
            OptimizerConfig::RmsProp { rho, momentum, epsilon } => {
                unit("rho", rho)?;
                unit("momentum", momentum)?;
                positive("epsilon", epsilon)
            }
        }
    }
}

/// Per-parameter accumulators. What `first` and `second` hold depends on the
/// optimizer: velocity / first moment / momentum buffer in `first`, squared
/// or infinity-norm accumulators in `second`, Adadelta's squared-update
/// accumulator in `third`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub third: Vec<f64>,
}

impl OptimizerState {
    pub fn new(config: &OptimizerConfig, len: usize) -> Self {
        let second_init = match config {
            OptimizerConfig::Adagrad { initial_accumulator, .. } => *initial_accumulator,
            _ => 0.0,
        };
        let third_len = if matches!(config, OptimizerConfig::Adadelta { .. }) { len } else { 0 };
        OptimizerState {
            step: 0,
            first: vec![0.0; len],
            second: vec![second_init; len],
            third: vec![0.0; third_len],
        }
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }
}

/// Applies one update in place. A non-finite gradient aborts before anything
/// is modified.
pub fn step(config: &OptimizerConfig, state: &mut OptimizerState, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::shape(
            "optimizer step",
            format!("params {} / state {}", params.len(), state.len()),
            format!("grads {}", grads.len()),
        ));
    }
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::PoisonedUpdate { index });
    }
    state.step += 1;
    let t = state.step as i32;
    match *config {
        OptimizerConfig::Sgd { momentum, .. } => {
            for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut state.first) {
                *v = momentum * *v - lr * g;
                *p += *v;
            }
        }
        OptimizerConfig::Adam { beta_1, beta_2, epsilon } => {
            let c1 = 1.0 - beta_1.powi(t);
            let c2 = 1.0 - beta_2.powi(t);
            for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
                *m = beta_1 * *m + (1.0 - beta_1) * g;
                *v = beta_2 * *v + (1.0 - beta_2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * (m_hat / (v_hat.sqrt() + epsilon));
            }
        }
        OptimizerConfig::Adamax { beta_1, beta_2, epsilon } => {
            let c1 = 1.0 - beta_1.powi(t);
            for (((p, &g), m), u) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
                *m = beta_1 * *m + (1.0 - beta_1) * g;
                *u = (beta_2 * *u).max(g.abs());
                *p -= lr * ((*m / c1) / (*u + epsilon));
            }
        }
        OptimizerConfig::Adagrad { epsilon, .. } => {
            for ((p, &g), acc) in params.iter_mut().zip(grads).zip(&mut state.second) {
                *acc += g * g;
                *p -= lr * (g / (acc.sqrt() + epsilon));
            }
        }
        OptimizerConfig::Adadelta { rho, epsilon } => {
            for (((p, &g), acc), acc_delta) in params.iter_mut().zip(grads).zip(&mut state.second).zip(&mut state.third) {
                *acc = rho * *acc + (1.0 - rho) * g * g;
                let update = g * ((*acc_delta + epsilon).sqrt() / (*acc + epsilon).sqrt());
                *acc_delta = rho * *acc_delta + (1.0 - rho) * update * update;
                *p -= lr * update;
            }
        }
        OptimizerConfig::RmsProp { rho, momentum, epsilon } => {
            for (((p, &g), acc), buf) in params.iter_mut().zip(grads).zip(&mut state.second).zip(&mut state.first) {
                *acc = rho * *acc + (1.0 - rho) * g * g;
                let update = lr * (g / (acc.sqrt() + epsilon));
                if momentum > 0.0 {
                    *buf = momentum * *buf + update;
                    *p -= *buf;
                } else {
                    *p -= update;
                }
            }
        }
    }
    Ok(())
}

/// Optimizer configuration bundled with its state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub config: OptimizerConfig,
    pub state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        Optimizer {
            config,
            state: OptimizerState::new(&config, len),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        step(&self.config, &mut self.state, params, grads, lr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    StepDecay { factor: f64, every_n_epochs: u32 },
    ExponentialDecay { rate: f64 },
}

/// Default per-epoch rate for exponential decay.
pub const DEFAULT_EXP_DECAY_RATE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial_lr: f64,
    #[serde(flatten)]
    pub kind: ScheduleKind,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::constant(1e-3)
    }
}

impl LrSchedule {
    pub fn constant(initial_lr: f64) -> Self {
        LrSchedule {
            initial_lr,
            kind: ScheduleKind::Constant,
        }
    }

    pub fn step_decay(initial_lr: f64, factor: f64, every_n_epochs: u32) -> Self {
        LrSchedule {
            initial_lr,
            kind: ScheduleKind::StepDecay { factor, every_n_epochs },
        }
    }

    pub fn exponential(initial_lr: f64, rate: f64) -> Self {
        LrSchedule {
            initial_lr,
            kind: ScheduleKind::ExponentialDecay { rate },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr {} must be positive", self.initial_lr)));
        }
        match self.kind {
            ScheduleKind::Constant => Ok(()),
            ScheduleKind::StepDecay { factor, every_n_epochs } => {
                if !(factor > 0.0 && factor < 1.0) {
                    return Err(Error::Config(format!("step decay factor {factor} outside (0, 1)")));
                }
                if every_n_epochs == 0 {
                    return Err(Error::Config("step decay interval must be at least 1".into()));
                }
                Ok(())
            }
            ScheduleKind::ExponentialDecay { rate } => {
                if !(rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::Config(format!("exponential decay rate {rate} must be non-negative")));
                }
                Ok(())
            }
        }
    }

    pub fn lr_at(&self, epoch: u32) -> f64 {
        lr_at(self, epoch)
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: u32) -> f64 {
    match schedule.kind {
        ScheduleKind::Constant => schedule.initial_lr,
        ScheduleKind::StepDecay { factor, every_n_epochs } => {
            schedule.initial_lr * factor.powi((epoch / every_n_epochs.max(1)) as i32)
        }
        ScheduleKind::ExponentialDecay { rate } => schedule.initial_lr * (-rate * epoch as f64).exp(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step() {
        let mut params = [0.0];
        let mut state = OptimizerState::new(&OptimizerConfig::adam(), 1);
        step(&OptimizerConfig::adam(), &mut state, &mut params, &[1.0], 1e-3).unwrap();
        assert_eq!(params[0], -1e-3 * (1.0 / (1.0 + 1e-9)));
        assert_eq!(state.step, 1);
    }

    #[test]
    fn sgd_momentum_by_hand() {
        let cfg = OptimizerConfig::sgd();
        let mut state = OptimizerState::new(&cfg, 1);
        let mut p = [0.0];
        step(&cfg, &mut state, &mut p, &[1.0], 0.1).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-15);
        let before = p[0];
        step(&cfg, &mut state, &mut p, &[1.0], 0.1).unwrap();
        assert!((p[0] - before + 0.19).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        for cfg in OptimizerConfig::all_defaults() {
            let mut state = OptimizerState::new(&cfg, 3);
            let mut p = [0.5, -1.0, 2.0];
            step(&cfg, &mut state, &mut p, &[0.0; 3], 1e-2).unwrap();
            assert_eq!(p, [0.5, -1.0, 2.0], "{}", cfg.name());
        }
    }

    #[test]
    fn poisoned_gradient_untouched() {
        for cfg in OptimizerConfig::all_defaults() {
            let mut state = OptimizerState::new(&cfg, 2);
            let mut p = [1.0, 2.0];
            let err = step(&cfg, &mut state, &mut p, &[0.1, f64::NAN], 1e-3).unwrap_err();
            assert!(matches!(err, Error::PoisonedUpdate { index: 1 }));
            assert_eq!(p, [1.0, 2.0]);
            assert_eq!(state, OptimizerState::new(&cfg, 2));
        }
    }

    #[test]
    fn length_mismatch_rejected() {
        let cfg = OptimizerConfig::adam();
        let mut state = OptimizerState::new(&cfg, 2);
        assert!(step(&cfg, &mut state, &mut [0.0; 2], &[0.0; 3], 1e-3).is_err());
    }

    #[test]
    fn defaults_and_json() {
        let json = r#"{"kind":"adagrad"}"#;
        let cfg: OptimizerConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg, OptimizerConfig::adagrad());
        for cfg in OptimizerConfig::all_defaults() {
            cfg.validate().unwrap();
            let text = serde_json::to_string(&cfg).unwrap();
            assert_eq!(serde_json::from_str::<OptimizerConfig>(&text).unwrap(), cfg);
        }
        assert!(serde_json::from_str::<OptimizerConfig>(r#"{"kind":"adam","beta3":1}"#).is_err());
        let nesterov = OptimizerConfig::Sgd { momentum: 0.9, nesterov: true };
        assert!(nesterov.validate().is_err());
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(lr_at(&LrSchedule::constant(1e-3), 499), 1e-3);
        assert_eq!(lr_at(&LrSchedule::step_decay(1e-2, 0.5, 20), 25), 5e-3);
        assert_eq!(lr_at(&LrSchedule::exponential(1e-2, 0.01), 0), 1e-2);
    }

    #[test]
    fn schedule_validation_and_json() {
        assert!(LrSchedule::constant(0.0).validate().is_err());
        assert!(LrSchedule::step_decay(1e-2, 1.0, 10).validate().is_err());
        assert!(LrSchedule::step_decay(1e-2, 0.5, 0).validate().is_err());
        let s: LrSchedule = serde_json::from_str(r#"{"initial_lr":0.01,"kind":"step_decay","factor":0.5,"every_n_epochs":20}"#).unwrap();
        assert_eq!(s, LrSchedule::step_decay(1e-2, 0.5, 20));
    }
}
