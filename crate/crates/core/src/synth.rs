//! Seeded generator of synthetic pouring trials.
//!
//! A cylindrical source cup holds `f_init` lbf of water. The cup rotates
//! with a trapezoidal (ramp, hold, ramp) angular velocity profile. Water
//! starts leaving once the tilt reaches the angle at which the free surface
//! meets the rim, and the poured amount follows a logistic curve in the tilt
//! angle, so the scale reading `f(t)` falls smoothly from `f_init` toward
//! `f_init - f_target`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{write_trial, PouringTrial};
use crate::error::{Error, Result};
use crate::model::MAX_STEPS;

/// Water volume per lbf, in mm³.
const MM3_PER_LBF: f64 = 453.592_37 * 1000.0;
/// Angle past the spill angle at which half of the target has been poured.
const POUR_MIDPOINT_DEG: f64 = 10.0;
/// Logistic width of the outflow curve, in degrees.
const POUR_WIDTH_DEG: f64 = 4.0;
const MAX_GEOMETRY_DRAWS: usize = 100;

fn d_n_trials() -> usize {
    688
}
fn d_length_range() -> [usize; 2] {
    [300, MAX_STEPS]
}
fn d_f_init_range() -> [f64; 2] {
    [0.3, 1.0]
}
fn d_f_target_fraction_range() -> [f64; 2] {
    [0.2, 0.8]
}
fn d_h_cup_range() -> [f64; 2] {
    [80.0, 150.0]
}
fn d_d_cup_range() -> [f64; 2] {
    [60.0, 95.0]
}
fn d_max_angular_velocity() -> f64 {
    1.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default = "d_n_trials")]
    pub n_trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_length_range")]
    pub length_range: [usize; 2],
    /// Starting water weight, lbf.
    #[serde(default = "d_f_init_range")]
    pub f_init_range: [f64; 2],
    /// Poured target as a fraction of `f_init`.
    #[serde(default = "d_f_target_fraction_range")]
    pub f_target_fraction_range: [f64; 2],
    /// Cup height, mm.
    #[serde(default = "d_h_cup_range")]
    pub h_cup_range: [f64; 2],
    /// Cup diameter, mm.
    #[serde(default = "d_d_cup_range")]
    pub d_cup_range: [f64; 2],
    /// Peak rotation speed cap, rad/s.
    #[serde(default = "d_max_angular_velocity")]
    pub max_angular_velocity: f64,
    /// Standard deviation of additive scale noise, lbf.
    #[serde(default)]
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_trials: d_n_trials(),
            seed: 0,
            length_range: d_length_range(),
            f_init_range: d_f_init_range(),
            f_target_fraction_range: d_f_target_fraction_range(),
            h_cup_range: d_h_cup_range(),
            d_cup_range: d_d_cup_range(),
            max_angular_velocity: d_max_angular_velocity(),
            noise: 0.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.length_range;
        if lo < 10 || lo > hi || hi > MAX_STEPS {
            return Err(Error::Config(format!("length range [{lo}, {hi}] must satisfy 10 <= min <= max <= {MAX_STEPS}")));
        }
        let ranges = [
            ("f_init_range", self.f_init_range),
            ("f_target_fraction_range", self.f_target_fraction_range),
            ("h_cup_range", self.h_cup_range),
            ("d_cup_range", self.d_cup_range),
        ];
        for (name, [a, b]) in ranges {
            if !(a > 0.0 && a <= b && b.is_finite()) {
                return Err(Error::Config(format!("{name} [{a}, {b}] must be positive and ordered")));
            }
        }
        if self.f_target_fraction_range[1] > 1.0 {
            return Err(Error::Config("cannot pour more than the cup holds".into()));
        }
        if !(self.max_angular_velocity > 0.0 && self.max_angular_velocity.is_finite()) {
            return Err(Error::Config("max_angular_velocity must be positive".into()));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config("noise must be non-negative".into()));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Tilt in degrees at which the water surface of a cylinder filled to
/// `fill` reaches the rim.
pub fn spill_angle_deg(fill: f64, h_cup: f64, d_cup: f64) -> f64 {
    (2.0 * (h_cup - fill) / d_cup).atan().to_degrees()
}

/// Water column height of `weight` lbf in a cylinder of diameter `d_cup` mm.
pub fn fill_height(weight: f64, d_cup: f64) -> f64 {
    weight * MM3_PER_LBF / (PI * d_cup * d_cup / 4.0)
}

fn generate_one(config: &SynthConfig, index: usize) -> Result<PouringTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let (f_init, h_cup, d_cup, fill) = (0..MAX_GEOMETRY_DRAWS)
        .map(|_| {
            let f_init = draw(&mut rng, config.f_init_range);
            let h_cup = draw(&mut rng, config.h_cup_range);
            let d_cup = draw(&mut rng, config.d_cup_range);
            (f_init, h_cup, d_cup, fill_height(f_init, d_cup))
        })
        .find(|&(_, h, _, fill)| fill < 0.95 * h)
        .ok_or_else(|| Error::Config(format!("trial {index}: no feasible cup geometry after {MAX_GEOMETRY_DRAWS} draws")))?;
    let f_target = draw(&mut rng, config.f_target_fraction_range) * f_init;
    let len = rng.random_range(config.length_range[0]..=config.length_range[1]);

    let spill = spill_angle_deg(fill, h_cup, d_cup);
    let midpoint = spill + POUR_MIDPOINT_DEG;
    let theta_end = midpoint + rng.random_range(25.0..45.0);

    // Trapezoidal speed profile over normalized time, zero at both ends.
    let peak = draw(&mut rng, [0.5, 1.0]) * config.max_angular_velocity;
    let ramp_up = rng.random_range(0.1..0.3);
    let ramp_down = rng.random_range(0.1..0.3);
    let shape = |t: usize| -> f64 {
        let u = t as f64 / (len - 1) as f64;
        if u < ramp_up {
            u / ramp_up
        } else if u > 1.0 - ramp_down {
            (1.0 - u) / ramp_down
        } else {
            1.0
        }
        .clamp(0.0, 1.0)
    };
    let theta_dot: Vec<f64> = (0..len).map(|t| peak * shape(t)).collect();
    let swept: f64 = theta_dot[..len - 1].iter().sum();
    let dt = theta_end.to_radians() / swept;
    let mut theta = Vec::with_capacity(len);
    let mut angle = 0.0;
    for t in 0..len {
        theta.push(angle);
        angle += (theta_dot[t] * dt).to_degrees();
    }

    let base = logistic(-midpoint / POUR_WIDTH_DEG);
    let mut f: Vec<f64> = theta
        .iter()
        .map(|&a| {
            let poured = (logistic((a - midpoint) / POUR_WIDTH_DEG) - base) / (1.0 - base);
            f_init - f_target * poured.max(0.0)
        })
        .collect();
    f[0] = f_init;
    if config.noise > 0.0 {
        let mut prev = f_init;
        for v in f.iter_mut() {
            let noisy: f64 = *v + config.noise * rng.sample::<f64, _>(StandardNormal);
            *v = noisy.min(prev).max(0.0);
            prev = *v;
        }
    } else {
        for t in 1..len {
            f[t] = f[t].min(f[t - 1]);
        }
    }

    Ok(PouringTrial {
        theta,
        f,
        f_init,
        f_target,
        h_cup,
        d_cup,
        theta_dot,
    })
}

pub fn generate(config: &SynthConfig) -> Result<Vec<PouringTrial>> {
    config.validate()?;
    (0..config.n_trials).map(|i| generate_one(config, i)).collect()
}

/// File name of the `index`-th trial in a written corpus.
pub fn trial_file_name(index: usize) -> String {
    format!("trial_{index:05}.csv")
}

/// Writes one CSV per trial into `dir` (created if missing).
pub fn write_corpus(trials: &[PouringTrial], dir: &Path) -> Result<usize> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, trial) in trials.iter().enumerate() {
        write_trial(&dir.join(trial_file_name(i)), trial)?;
    }
    Ok(trials.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_trials, split};

    fn small(n: usize, noise: f64) -> SynthConfig {
        SynthConfig {
            n_trials: n,
            seed: 17,
            length_range: [40, 120],
            noise,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_trials_start_full_and_never_gain_weight() {
        for t in generate(&small(30, 0.0)).unwrap() {
            assert_eq!(t.f[0], t.f_init);
            assert!(t.f.windows(2).all(|w| w[1] <= w[0]));
            assert!(t.theta.windows(2).all(|w| w[1] >= w[0]));
            assert!(t.f_init - t.f.last().unwrap() <= t.f_init);
            // Most of the target actually leaves the cup.
            let poured = t.f_init - t.f.last().unwrap();
            assert!(poured > 0.9 * t.f_target && poured <= t.f_target + 1e-12);
            t.check_invariants().unwrap();
        }
    }

    #[test]
    fn noisy_trials_stay_monotone_and_bounded() {
        for t in generate(&small(20, 0.01)).unwrap() {
            assert!(t.f.windows(2).all(|w| w[1] <= w[0]));
            assert!(t.f.iter().all(|&v| v >= 0.0 && v <= t.f_init));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small(10, 0.005)).unwrap();
        assert_eq!(a, generate(&small(10, 0.005)).unwrap());
        let mut other = small(10, 0.005);
        other.seed = 18;
        assert_ne!(a, generate(&other).unwrap());
        // A trial does not depend on how many others are generated.
        assert_eq!(a[..4], generate(&small(4, 0.005)).unwrap()[..]);
    }

    #[test]
    fn velocity_respects_cap_and_lengths_in_range() {
        let cfg = small(25, 0.0);
        for t in generate(&cfg).unwrap() {
            assert!((40..=120).contains(&t.len()));
            assert!(t.theta_dot.iter().all(|&w| (0.0..=cfg.max_angular_velocity).contains(&w)));
        }
    }

    #[test]
    fn invalid_configs() {
        let mut c = small(1, 0.0);
        c.length_range = [5, 20];
        assert!(generate(&c).is_err());
        let mut c = small(1, 0.0);
        c.noise = -1.0;
        assert!(generate(&c).is_err());
        let mut c = small(1, 0.0);
        c.f_init_range = [50.0, 60.0];
        assert!(matches!(generate(&c), Err(Error::Config(msg)) if msg.contains("geometry")));
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(write_corpus(&[], dir.path()).unwrap(), 0);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        let trials = generate(&small(5, 0.002)).unwrap();
        assert_eq!(write_corpus(&trials, dir.path()).unwrap(), 5);
        assert_eq!(load_trials(dir.path()).unwrap(), trials);
    }

    #[test]
    fn full_size_corpus_splits() {
        let cfg = SynthConfig {
            n_trials: 688,
            seed: 3,
            length_range: [300, 700],
            ..SynthConfig::default()
        };
        let trials = generate(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(&trials, dir.path()).unwrap();
        let loaded = load_trials(dir.path()).unwrap();
        assert_eq!(loaded.len(), 688);
        let s = split(&loaded, 0.8, 3).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (550, 138));
    }
}
