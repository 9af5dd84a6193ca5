//! Stacked recurrent network with a linear dense head.
//!
//! Each recurrent layer returns its full output sequence to the next layer.
//! Optional inverted dropout sits between the last recurrent layer and the
//! head. Sequences in a [`PaddedBatch`] are post-padded; the recurrence for a
//! sequence stops at its true length, so padding never reaches a cell and
//! predictions at padded steps are zero.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cells::{cell_backward_acc, cell_forward, CellKind, CellParams, CellState, CellTape, GruVariant};
use crate::data::{PouringTrial, ScalerParams};
use crate::error::{Error, Result};
use crate::numerics::{dot, Matrix};

/// Longest sequence a batch may hold.
pub const MAX_STEPS: usize = 700;
/// Width of the per-timestep feature row.
pub const INPUT_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: CellKind,
    pub units: usize,
}

fn default_input_dim() -> usize {
    INPUT_DIM
}

fn default_head_dim() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default)]
    pub dropout_rate: f64,
    #[serde(default)]
    pub gru_variant: GruVariant,
    #[serde(default = "default_head_dim")]
    pub head_dim: usize,
}

/// Layer widths of the eight architecture-sweep designs.
pub const DESIGNS: [&[usize]; 8] = [
    &[16],
    &[32],
    &[64],
    &[16, 16, 16, 16],
    &[8, 16, 32, 64],
    &[64, 32, 16, 8],
    &[64, 64, 32, 32, 16, 16],
    &[64, 64, 64, 32, 32, 16, 16],
];

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::design(8, CellKind::Gru).expect("design 8 exists")
    }
}

impl NetworkSpec {
    /// A stack of same-kind layers with the given widths.
    pub fn uniform(kind: CellKind, units: &[usize]) -> Self {
        NetworkSpec {
            layers: units.iter().map(|&units| LayerSpec { kind, units }).collect(),
            input_dim: INPUT_DIM,
            dropout_rate: 0.0,
            gru_variant: GruVariant::ResetAfter,
            head_dim: 1,
        }
    }

    /// Sweep design `number` (1-based) built from `kind` cells.
    pub fn design(number: usize, kind: CellKind) -> Result<Self> {
        let units = number
            .checked_sub(1)
            .and_then(|i| DESIGNS.get(i))
            .ok_or_else(|| Error::Config(format!("unknown design {number}; expected 1-8")))?;
        Ok(NetworkSpec::uniform(kind, units))
    }

    /// Parses `design1` … `design8`.
    pub fn named(name: &str, kind: CellKind) -> Result<Self> {
        let number = name
            .strip_prefix("design")
            .and_then(|n| n.parse::<usize>().ok())
            .ok_or_else(|| Error::Config(format!("unknown design name `{name}`")))?;
        NetworkSpec::design(number, kind)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network needs at least one recurrent layer".into()));
        }
        if let Some(l) = self.layers.iter().find(|l| l.units == 0) {
            return Err(Error::Config(format!("{} layer with zero units", l.kind)));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.head_dim != 1 {
            return Err(Error::Config(format!("head_dim must be 1, got {}", self.head_dim)));
        }
        Ok(())
    }

    /// `(input_dim, units)` of every recurrent layer.
    pub fn layer_shapes(&self) -> impl Iterator<Item = (LayerSpec, usize)> + '_ {
        let mut input = self.input_dim;
        self.layers.iter().map(move |l| {
            let shape = (*l, input);
            input = l.units;
            shape
        })
    }

    pub fn last_units(&self) -> usize {
        self.layers.last().map_or(self.input_dim, |l| l.units)
    }
}

/// Exact trainable scalar count implied by `spec`.
pub fn param_count(spec: &NetworkSpec) -> usize {
    let recurrent: usize = spec
        .layer_shapes()
        .map(|(l, input)| CellParams::count_for(l.kind, input, l.units, spec.gru_variant))
        .sum();
    recurrent + spec.head_dim * spec.last_units() + spec.head_dim
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub layers: Vec<CellParams>,
    pub head_weight: Matrix,
    pub head_bias: f64,
}

impl ParamSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        ParamSet {
            layers: spec
                .layer_shapes()
                .map(|(l, input)| CellParams::zeros(l.kind, input, l.units, spec.gru_variant))
                .collect(),
            head_weight: Matrix::zeros(1, spec.last_units()),
            head_bias: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            layers: self.layers.iter().map(CellParams::zeros_like).collect(),
            head_weight: Matrix::zeros(1, self.head_weight.cols()),
            head_bias: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(CellParams::param_count).sum::<usize>() + self.head_weight.cols() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.input_dim)
    }

    /// Flattened in layer, gate, (input kernel, recurrent kernel, bias,
    /// recurrent bias) order, kernels row-major, then head weight and bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for layer in &self.layers {
            for s in layer.slices() {
                out.extend_from_slice(s);
            }
        }
        out.extend_from_slice(self.head_weight.as_slice());
        out.push(self.head_bias);
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::shape("ParamSet::assign_flat", self.len(), flat.len()));
        }
        let mut offset = 0;
        for layer in &mut self.layers {
            for s in layer.slices_mut() {
                s.copy_from_slice(&flat[offset..offset + s.len()]);
                offset += s.len();
            }
        }
        let hw = self.head_weight.as_mut_slice();
        hw.copy_from_slice(&flat[offset..offset + hw.len()]);
        offset += hw.len();
        self.head_bias = flat[offset];
        Ok(())
    }

    pub fn from_flat(spec: &NetworkSpec, flat: &[f64]) -> Result<Self> {
        let mut p = ParamSet::zeros(spec);
        p.assign_flat(flat)?;
        Ok(p)
    }

    pub fn add_assign(&mut self, other: &ParamSet) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (sa, sb) in a.slices_mut().zip(b.slices()) {
                for (x, y) in sa.iter_mut().zip(sb) {
                    *x += y;
                }
            }
        }
        for (x, y) in self.head_weight.as_mut_slice().iter_mut().zip(other.head_weight.as_slice()) {
            *x += y;
        }
        self.head_bias += other.head_bias;
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            for s in layer.slices_mut() {
                s.iter_mut().for_each(|x| *x *= factor);
            }
        }
        self.head_weight.as_mut_slice().iter_mut().for_each(|x| *x *= factor);
        self.head_bias *= factor;
    }

    /// Same layer kinds and shapes as `other`.
    pub fn matches_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| {
                (a.kind, a.input_dim, a.units, a.gru_variant) == (b.kind, b.input_dim, b.units, b.gru_variant)
            })
            && self.head_weight.shape() == other.head_weight.shape()
    }

    pub fn matches(&self, spec: &NetworkSpec) -> bool {
        self.layers.len() == spec.layers.len()
            && self
                .layers
                .iter()
                .zip(spec.layer_shapes())
                .all(|(p, (l, input))| p.kind == l.kind && p.units == l.units && p.input_dim == input && (p.kind != CellKind::Gru || p.gru_variant == spec.gru_variant))
            && self.head_weight.cols() == spec.last_units()
    }
}

/// Uniform Glorot bound `√(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Orthogonal `n × n` matrix from the QR factorization of a Gaussian draw,
/// with column signs fixed so that `R` has a positive diagonal.
fn orthogonal(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let g = DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, q[(i, j)]);
        }
    }
    m
}

/// Seeded initialization: Glorot-uniform input kernels (fans taken over the
/// layer's concatenated gate kernel), orthogonal recurrent kernels, zero
/// biases, Glorot-uniform head.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::zeros(spec);
    for layer in &mut params.layers {
        let limit = glorot_limit(layer.input_dim, layer.units * layer.kind.gate_count());
        for gate in &mut layer.gates {
            for w in gate.input.as_mut_slice() {
                *w = rng.random_range(-limit..limit);
            }
            gate.recurrent = orthogonal(layer.units, &mut rng);
        }
    }
    let limit = glorot_limit(spec.last_units(), spec.head_dim);
    for w in params.head_weight.as_mut_slice() {
        *w = rng.random_range(-limit..limit);
    }
    Ok(params)
}

/// Post-padded batch of sequences.
///
/// `inputs` is `[batch × steps × input_dim]`, `targets` and `mask` are
/// `[batch × steps]`, all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    pub steps: usize,
    pub input_dim: usize,
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub mask: Vec<f64>,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    /// Builds a batch from `(inputs, targets)` pairs, where `inputs` holds
    /// `len × input_dim` values row-major and `targets` holds `len` values.
    pub fn from_sequences(steps: usize, input_dim: usize, seqs: &[(&[f64], &[f64])]) -> Result<Self> {
        if steps > MAX_STEPS {
            return Err(Error::shape("PaddedBatch", format!("max {MAX_STEPS} steps"), steps));
        }
        let b = seqs.len();
        let mut batch = PaddedBatch {
            steps,
            input_dim,
            inputs: vec![0.0; b * steps * input_dim],
            targets: vec![0.0; b * steps],
            mask: vec![0.0; b * steps],
            lengths: Vec::with_capacity(b),
        };
        for (i, (x, y)) in seqs.iter().enumerate() {
            let len = y.len();
            if len > steps {
                return Err(Error::shape("PaddedBatch", format!("{steps} steps"), format!("sequence of {len}")));
            }
            if x.len() != len * input_dim {
                return Err(Error::shape("PaddedBatch", format!("{len}x{input_dim} inputs"), format!("{} values", x.len())));
            }
            let base = i * steps;
            batch.inputs[base * input_dim..(base + len) * input_dim].copy_from_slice(x);
            batch.targets[base..base + len].copy_from_slice(y);
            batch.mask[base..base + len].fill(1.0);
            batch.lengths.push(len);
        }
        Ok(batch)
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn real_steps(&self) -> usize {
        self.lengths.iter().sum()
    }

    pub fn sequence_inputs(&self, b: usize) -> &[f64] {
        let start = b * self.steps * self.input_dim;
        &self.inputs[start..start + self.lengths[b] * self.input_dim]
    }

    pub fn sequence_targets(&self, b: usize) -> &[f64] {
        let start = b * self.steps;
        &self.targets[start..start + self.lengths[b]]
    }

    /// Same batch re-padded to `steps` (≥ the current padding).
    pub fn with_steps(&self, steps: usize) -> Result<Self> {
        let seqs: Vec<(&[f64], &[f64])> = (0..self.batch_size())
            .map(|b| (self.sequence_inputs(b), self.sequence_targets(b)))
            .collect();
        PaddedBatch::from_sequences(steps, self.input_dim, &seqs)
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        if self.steps > MAX_STEPS {
            return Err(Error::shape("PaddedBatch", format!("max {MAX_STEPS} steps"), self.steps));
        }
        if self.inputs.len() != b * self.steps * self.input_dim || self.targets.len() != b * self.steps || self.mask.len() != b * self.steps {
            return Err(Error::shape("PaddedBatch", "consistent buffers", "mismatched buffer lengths"));
        }
        for (i, &len) in self.lengths.iter().enumerate() {
            if len > self.steps {
                return Err(Error::shape("PaddedBatch", self.steps, len));
            }
            for t in 0..self.steps {
                let at = i * self.steps + t;
                let real = t < len;
                if self.mask[at] != if real { 1.0 } else { 0.0 } {
                    return Err(Error::Degenerate(format!("mask disagrees with length at sequence {i} step {t}")));
                }
                if !real {
                    let row = &self.inputs[at * self.input_dim..(at + 1) * self.input_dim];
                    if self.targets[at] != 0.0 || row.iter().any(|&v| v != 0.0) {
                        return Err(Error::Degenerate(format!("non-zero padding at sequence {i} step {t}")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    Eval,
    Train { dropout_rate: f64, seed: u64 },
}

/// Cached activations of one sequence.
#[derive(Clone, Debug)]
pub struct SequenceTape {
    layers: Vec<Vec<CellTape>>,
    /// Inverted-dropout multipliers, `len × last_units`.
    dropout: Option<Vec<f64>>,
    /// Head inputs after dropout, `len × last_units`.
    head_inputs: Vec<f64>,
    pub predictions: Vec<f64>,
}

impl SequenceTape {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Tape {
    pub steps: usize,
    pub sequences: Vec<SequenceTape>,
}

pub(crate) fn check_params(params: &ParamSet, input_dim: usize) -> Result<()> {
    if params.layers.is_empty() {
        return Err(Error::Config("parameter set has no layers".into()));
    }
    if params.input_dim() != input_dim {
        return Err(Error::shape("forward", format!("params input_dim {}", params.input_dim()), format!("batch input_dim {input_dim}")));
    }
    let mut prev = input_dim;
    for l in &params.layers {
        if l.input_dim != prev {
            return Err(Error::shape("forward", format!("layer expecting {}", l.input_dim), format!("previous width {prev}")));
        }
        prev = l.units;
    }
    if params.head_weight.shape() != (1, prev) {
        return Err(Error::shape("forward", format!("head 1x{prev}"), format!("{:?}", params.head_weight.shape())));
    }
    Ok(())
}

/// Inverted-dropout multipliers for one sequence's head inputs, drawn from
/// stream `stream` of the step seed.
pub(crate) fn dropout_mask(seed: u64, stream: u64, n: usize, rate: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let keep = 1.0 - rate;
    (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { 1.0 / keep }).collect()
}

/// Forward pass of one unpadded sequence (`inputs` is `len × input_dim`).
pub fn forward_sequence(params: &ParamSet, inputs: &[f64], mode: Mode, stream: u64) -> Result<SequenceTape> {
    let input_dim = params.input_dim();
    let len = inputs.len() / input_dim.max(1);
    let mut layers: Vec<Vec<CellTape>> = Vec::with_capacity(params.layers.len());
    for (l, p) in params.layers.iter().enumerate() {
        let mut state = CellState::zeros(p.kind, p.units);
        let mut tapes = Vec::with_capacity(len);
        for t in 0..len {
            let x: &[f64] = match l {
                0 => &inputs[t * input_dim..(t + 1) * input_dim],
                _ => layers[l - 1][t].output(),
            };
            let (next, tape) = cell_forward(x, &state, p)?;
            state = next;
            tapes.push(tape);
        }
        layers.push(tapes);
    }

    let units = params.head_weight.cols();
    let mut head_inputs = Vec::with_capacity(len * units);
    if let Some(last) = layers.last() {
        for tape in last {
            head_inputs.extend_from_slice(tape.output());
        }
    }
    let dropout = match mode {
        Mode::Train { dropout_rate, seed } if dropout_rate > 0.0 => {
            let mask = dropout_mask(seed, stream, len * units, dropout_rate);
            for (h, m) in head_inputs.iter_mut().zip(&mask) {
                *h *= m;
            }
            Some(mask)
        }
        _ => None,
    };
    let w = params.head_weight.row(0);
    let predictions = head_inputs
        .chunks_exact(units)
        .map(|h| dot(w, h) + params.head_bias)
        .collect();
    Ok(SequenceTape {
        layers,
        dropout,
        head_inputs,
        predictions,
    })
}

/// Full BPTT of one sequence; `grad_pred[t]` is dLoss/dprediction at real step `t`.
pub fn backward_sequence(params: &ParamSet, tape: &SequenceTape, grad_pred: &[f64], grads: &mut ParamSet) -> Result<()> {
    let len = tape.len();
    if grad_pred.len() != len {
        return Err(Error::TapeMismatch(format!("{} step gradients for a {len}-step tape", grad_pred.len())));
    }
    if tape.layers.len() != params.layers.len() {
        return Err(Error::TapeMismatch("layer count differs from params".into()));
    }
    let units = params.head_weight.cols();
    let w = params.head_weight.row(0);
    let mut upstream = vec![0.0; len * units];
    for t in 0..len {
        let g = grad_pred[t];
        if g == 0.0 {
            continue;
        }
        let h = &tape.head_inputs[t * units..(t + 1) * units];
        for (gw, hv) in grads.head_weight.as_mut_slice().iter_mut().zip(h) {
            *gw += g * hv;
        }
        grads.head_bias += g;
        let up = &mut upstream[t * units..(t + 1) * units];
        for (u, wv) in up.iter_mut().zip(w) {
            *u = g * wv;
        }
        if let Some(mask) = &tape.dropout {
            for (u, m) in up.iter_mut().zip(&mask[t * units..(t + 1) * units]) {
                *u *= m;
            }
        }
    }

    for l in (0..params.layers.len()).rev() {
        let p = &params.layers[l];
        let g = &mut grads.layers[l];
        let tapes = &tape.layers[l];
        if tapes.len() != len {
            return Err(Error::TapeMismatch(format!("layer {l} tape has {} steps, expected {len}", tapes.len())));
        }
        let mut below = vec![0.0; len * p.input_dim];
        let mut carry_h = vec![0.0; p.units];
        let mut carry_c = (p.kind == CellKind::Lstm).then(|| vec![0.0; p.units]);
        for t in (0..len).rev() {
            let mut gh = upstream[t * p.units..(t + 1) * p.units].to_vec();
            for (a, b) in gh.iter_mut().zip(&carry_h) {
                *a += b;
            }
            let (dx, dprev) = cell_backward_acc(&tapes[t], &gh, carry_c.as_deref(), p, g)?;
            below[t * p.input_dim..(t + 1) * p.input_dim].copy_from_slice(&dx);
            carry_h = dprev.h.into_vec();
            carry_c = dprev.c.map(|c| c.into_vec());
        }
        upstream = below;
    }
    Ok(())
}

/// Runs every sequence of the batch; predictions are `[batch × steps]` with
/// zeros at padded steps.
pub fn forward(batch: &PaddedBatch, params: &ParamSet, mode: Mode) -> Result<(Vec<f64>, Tape)> {
    if batch.steps > MAX_STEPS {
        return Err(Error::shape("forward", format!("max {MAX_STEPS} steps"), batch.steps));
    }
    check_params(params, batch.input_dim)?;
    let mut preds = vec![0.0; batch.batch_size() * batch.steps];
    let mut sequences = Vec::with_capacity(batch.batch_size());
    for b in 0..batch.batch_size() {
        let seq = forward_sequence(params, batch.sequence_inputs(b), mode, b as u64)?;
        preds[b * batch.steps..b * batch.steps + seq.len()].copy_from_slice(&seq.predictions);
        sequences.push(seq);
    }
    Ok((
        preds,
        Tape {
            steps: batch.steps,
            sequences,
        },
    ))
}

/// Gradient of a loss whose derivative with respect to the predictions is
/// `loss_grad` (`[batch × steps]`). Padded steps contribute nothing.
pub fn backward(tape: &Tape, batch: &PaddedBatch, params: &ParamSet, loss_grad: &[f64]) -> Result<ParamSet> {
    if tape.sequences.len() != batch.batch_size() || tape.steps != batch.steps {
        return Err(Error::TapeMismatch("tape was recorded on a different batch".into()));
    }
    if loss_grad.len() != batch.batch_size() * batch.steps {
        return Err(Error::shape("backward", batch.batch_size() * batch.steps, loss_grad.len()));
    }
    let mut grads = params.zeros_like();
    for (b, seq) in tape.sequences.iter().enumerate() {
        if seq.len() != batch.lengths[b] {
            return Err(Error::TapeMismatch(format!("sequence {b} length differs from tape")));
        }
        let start = b * batch.steps;
        backward_sequence(params, seq, &loss_grad[start..start + seq.len()], &mut grads)?;
    }
    Ok(grads)
}

/// Eval-mode prediction of `f(t)` for one trial, unpadded, in the target's
/// raw units.
pub fn predict_sequence(trial: &PouringTrial, params: &ParamSet, scaler: &ScalerParams) -> Result<Vec<f64>> {
    if params.input_dim() != INPUT_DIM {
        return Err(Error::shape("predict_sequence", format!("params input_dim {}", params.input_dim()), INPUT_DIM));
    }
    if trial.len() == 0 {
        return Ok(Vec::new());
    }
    let scaled = scaler.transform(trial)?;
    let inputs: Vec<f64> = scaled.iter().flatten().copied().collect();
    check_params(params, INPUT_DIM)?;
    Ok(forward_sequence(params, &inputs, Mode::Eval, 0)?.predictions)
}
