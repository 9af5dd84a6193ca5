//! Lockstep mini-batch forward/backward used for training and bulk scoring.
//!
//! Sequences are sorted longest-first and packed time-major: the rows of
//! step `t` are the `active[t]` sequences still running, and because of the
//! sort they are always a prefix of the batch. Each step's recurrent product
//! is then a single matrix–matrix multiply over the active rows, and the
//! input projections and weight gradients are one multiply per layer over
//! every packed row. Padding never enters the computation.
//!
//! Results match the per-sequence path in [`crate::model`] up to floating
//! point summation order.

use matrixmultiply::dgemm;

use crate::cells::{CellKind, CellParams, GruVariant};
use crate::error::{Error, Result};
use crate::model::{check_params, dropout_mask, Mode, ParamSet};
use crate::numerics::{dot, sigmoid_scalar};

// ---- thin safe wrappers over dgemm -------------------------------------

fn span(rows: usize, cols: usize, ld: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * ld + cols
    }
}

/// `c[m×n] = beta·c + a[m×k] · w[n×k]ᵀ`
#[allow(clippy::too_many_arguments)]
fn gemm_abt(m: usize, n: usize, k: usize, a: &[f64], lda: usize, w: &[f64], ldw: usize, beta: f64, c: &mut [f64], ldc: usize) {
    assert!(a.len() >= span(m, k, lda) && w.len() >= span(n, k, ldw) && c.len() >= span(m, n, ldc));
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: the extents checked above cover every element dgemm touches.
    unsafe {
        dgemm(m, k, n, 1.0, a.as_ptr(), lda as isize, 1, w.as_ptr(), 1, ldw as isize, beta, c.as_mut_ptr(), ldc as isize, 1);
    }
}

/// `c[m×n] += a[m×k] · w[k×n]`
#[allow(clippy::too_many_arguments)]
fn gemm_ab(m: usize, n: usize, k: usize, a: &[f64], lda: usize, w: &[f64], ldw: usize, c: &mut [f64], ldc: usize) {
    assert!(a.len() >= span(m, k, lda) && w.len() >= span(k, n, ldw) && c.len() >= span(m, n, ldc));
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    // SAFETY: as above.
    unsafe {
        dgemm(m, k, n, 1.0, a.as_ptr(), lda as isize, 1, w.as_ptr(), ldw as isize, 1, 1.0, c.as_mut_ptr(), ldc as isize, 1);
    }
}

/// `c[m×n] += d[r×m]ᵀ · x[r×n]`
#[allow(clippy::too_many_arguments)]
fn gemm_atb(m: usize, n: usize, r: usize, d: &[f64], ldd: usize, x: &[f64], ldx: usize, c: &mut [f64], ldc: usize) {
    assert!(d.len() >= span(r, m, ldd) && x.len() >= span(r, n, ldx) && c.len() >= span(m, n, ldc));
    if m == 0 || n == 0 || r == 0 {
        return;
    }
    // SAFETY: as above.
    unsafe {
        dgemm(m, r, n, 1.0, d.as_ptr(), 1, ldd as isize, x.as_ptr(), ldx as isize, 1, 1.0, c.as_mut_ptr(), ldc as isize, 1);
    }
}

// ---- packing -----------------------------------------------------------

#[derive(Clone, Debug)]
struct Packing {
    /// Position of each batch entry in longest-first order.
    slot: Vec<usize>,
    lengths: Vec<usize>,
    active: Vec<usize>,
    offsets: Vec<usize>,
}

impl Packing {
    fn new(lengths: &[usize]) -> Self {
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
        let mut slot = vec![0; lengths.len()];
        for (s, &b) in order.iter().enumerate() {
            slot[b] = s;
        }
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let active: Vec<usize> = (0..steps).map(|t| lengths.iter().filter(|&&l| l > t).count()).collect();
        let mut offsets = Vec::with_capacity(steps + 1);
        offsets.push(0);
        for &m in &active {
            offsets.push(offsets.last().unwrap() + m);
        }
        Packing {
            slot,
            lengths: lengths.to_vec(),
            active,
            offsets,
        }
    }

    fn steps(&self) -> usize {
        self.active.len()
    }

    fn rows(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    fn row(&self, b: usize, t: usize) -> usize {
        self.offsets[t] + self.slot[b]
    }

    /// Scatters per-sequence `len × width` buffers into packed rows.
    fn pack(&self, seqs: &[&[f64]], width: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows() * width];
        for (b, seq) in seqs.iter().enumerate() {
            for t in 0..self.lengths[b] {
                let r = self.row(b, t);
                out[r * width..(r + 1) * width].copy_from_slice(&seq[t * width..(t + 1) * width]);
            }
        }
        out
    }

    fn unpack(&self, packed: &[f64]) -> Vec<Vec<f64>> {
        (0..self.lengths.len())
            .map(|b| (0..self.lengths[b]).map(|t| packed[self.row(b, t)]).collect())
            .collect()
    }
}

// ---- per-layer weights and tapes ---------------------------------------

/// A layer's gate kernels stacked gate-major so each product is one GEMM.
struct Stacked {
    wx: Vec<f64>,
    wh: Vec<f64>,
    bx: Vec<f64>,
    bh: Option<Vec<f64>>,
}

impl Stacked {
    fn new(p: &CellParams) -> Self {
        let mut s = Stacked {
            wx: Vec::with_capacity(p.gates.len() * p.units * p.input_dim),
            wh: Vec::with_capacity(p.gates.len() * p.units * p.units),
            bx: Vec::with_capacity(p.gates.len() * p.units),
            bh: p.gates[0].recurrent_bias.as_ref().map(|_| Vec::new()),
        };
        for g in &p.gates {
            s.wx.extend_from_slice(g.input.as_slice());
            s.wh.extend_from_slice(g.recurrent.as_slice());
            s.bx.extend_from_slice(&g.bias);
            if let (Some(dst), Some(src)) = (&mut s.bh, &g.recurrent_bias) {
                dst.extend_from_slice(src);
            }
        }
        s
    }
}

#[derive(Clone, Debug)]
struct LayerTape {
    /// Previous hidden state per packed row (zero at `t = 0`).
    hprev: Vec<f64>,
    /// Gate activations, `rows × gates·units`.
    acts: Vec<f64>,
    /// GRU reset-after: recurrent term `U_h h + b_hh`; GRU reset-before:
    /// `r ⊙ h_prev`; LSTM: cell state. Empty for the simple RNN.
    aux: Vec<f64>,
    /// LSTM previous cell state.
    cprev: Vec<f64>,
    h: Vec<f64>,
}

fn layer_forward(p: &CellParams, w: &Stacked, x: &[f64], pk: &Packing) -> LayerTape {
    let (u, i) = (p.units, p.input_dim);
    let gu = p.gates.len() * u;
    let n = pk.rows();
    let lstm = p.kind == CellKind::Lstm;
    let before = p.kind == CellKind::Gru && p.gru_variant == GruVariant::ResetBefore;

    let mut ax: Vec<f64> = w.bx.iter().copied().cycle().take(n * gu).collect();
    gemm_abt(n, gu, i, x, i, &w.wx, i, 1.0, &mut ax, gu);

    let mut lt = LayerTape {
        hprev: vec![0.0; n * u],
        acts: vec![0.0; n * gu],
        aux: if p.kind == CellKind::SimpleRnn { Vec::new() } else { vec![0.0; n * u] },
        cprev: if lstm { vec![0.0; n * u] } else { Vec::new() },
        h: vec![0.0; n * u],
    };
    let mut ah = vec![0.0; pk.active.first().copied().unwrap_or(0) * gu];

    for t in 0..pk.steps() {
        let m = pk.active[t];
        let r0 = pk.offsets[t];
        if t > 0 {
            let p0 = pk.offsets[t - 1];
            lt.hprev[r0 * u..(r0 + m) * u].copy_from_slice(&lt.h[p0 * u..(p0 + m) * u]);
            if lstm {
                lt.cprev[r0 * u..(r0 + m) * u].copy_from_slice(&lt.aux[p0 * u..(p0 + m) * u]);
            }
        }
        let hp = &lt.hprev[r0 * u..(r0 + m) * u];
        let ah = &mut ah[..m * gu];
        match &w.bh {
            Some(bh) => ah.chunks_exact_mut(gu).for_each(|row| row.copy_from_slice(bh)),
            None => ah.fill(0.0),
        }
        // At t = 0 the previous state is zero and the product vanishes.
        let rec_gates = if before { 2 * u } else { gu };
        if t > 0 {
            gemm_abt(m, rec_gates, u, hp, u, &w.wh, u, 1.0, ah, gu);
        }

        for s in 0..m {
            let r = r0 + s;
            let ax = &ax[r * gu..(r + 1) * gu];
            let ah = &ah[s * gu..(s + 1) * gu];
            let acts = &mut lt.acts[r * gu..(r + 1) * gu];
            let h = &mut lt.h[r * u..(r + 1) * u];
            let hp = &lt.hprev[r * u..(r + 1) * u];
            match p.kind {
                CellKind::SimpleRnn => {
                    for k in 0..u {
                        h[k] = (ax[k] + ah[k]).tanh();
                        acts[k] = h[k];
                    }
                }
                CellKind::Lstm => {
                    let cp = &lt.cprev[r * u..(r + 1) * u];
                    let c = &mut lt.aux[r * u..(r + 1) * u];
                    for k in 0..u {
                        let ig = sigmoid_scalar(ax[k] + ah[k]);
                        let fg = sigmoid_scalar(ax[u + k] + ah[u + k]);
                        let gg = (ax[2 * u + k] + ah[2 * u + k]).tanh();
                        let og = sigmoid_scalar(ax[3 * u + k] + ah[3 * u + k]);
                        c[k] = fg * cp[k] + ig * gg;
                        h[k] = og * c[k].tanh();
                        acts[k] = ig;
                        acts[u + k] = fg;
                        acts[2 * u + k] = gg;
                        acts[3 * u + k] = og;
                    }
                }
                CellKind::Gru if !before => {
                    let rec = &mut lt.aux[r * u..(r + 1) * u];
                    for k in 0..u {
                        let z = sigmoid_scalar(ax[k] + ah[k]);
                        let rg = sigmoid_scalar(ax[u + k] + ah[u + k]);
                        rec[k] = ah[2 * u + k];
                        let cand = (ax[2 * u + k] + rg * rec[k]).tanh();
                        h[k] = (1.0 - z) * hp[k] + z * cand;
                        acts[k] = z;
                        acts[u + k] = rg;
                        acts[2 * u + k] = cand;
                    }
                }
                CellKind::Gru => {
                    let rh = &mut lt.aux[r * u..(r + 1) * u];
                    for k in 0..u {
                        acts[k] = sigmoid_scalar(ax[k] + ah[k]);
                        acts[u + k] = sigmoid_scalar(ax[u + k] + ah[u + k]);
                        rh[k] = acts[u + k] * hp[k];
                    }
                }
            }
        }

        if before {
            // Candidate needs the reset-scaled state of every active row first.
            if t > 0 {
                let rh = &lt.aux[r0 * u..(r0 + m) * u];
                gemm_abt(m, u, u, rh, u, &w.wh[2 * u * u..], u, 1.0, &mut ah[2 * u..], gu);
            }
            for s in 0..m {
                let r = r0 + s;
                let ax = &ax[r * gu..(r + 1) * gu];
                let ahr = &ah[s * gu..(s + 1) * gu];
                let acts = &mut lt.acts[r * gu..(r + 1) * gu];
                let hp = &lt.hprev[r * u..(r + 1) * u];
                let h = &mut lt.h[r * u..(r + 1) * u];
                for k in 0..u {
                    let cand = (ax[2 * u + k] + ahr[2 * u + k]).tanh();
                    acts[2 * u + k] = cand;
                    h[k] = (1.0 - acts[k]) * hp[k] + acts[k] * cand;
                }
            }
        }
    }
    lt
}

/// Backpropagates `up` (gradient w.r.t. this layer's outputs, packed) and
/// returns the gradient w.r.t. the layer inputs when `want_dx`.
fn layer_backward(p: &CellParams, w: &Stacked, x: &[f64], lt: &LayerTape, pk: &Packing, up: &[f64], g: &mut CellParams, want_dx: bool) -> Vec<f64> {
    let (u, i) = (p.units, p.input_dim);
    let gates = p.gates.len();
    let gu = gates * u;
    let n = pk.rows();
    let before = p.kind == CellKind::Gru && p.gru_variant == GruVariant::ResetBefore;
    let after = p.kind == CellKind::Gru && !before;

    // Input-side pre-activation gradients; the reset-after GRU also needs a
    // separate recurrent-side copy because `r` scales the candidate's
    // recurrent term.
    let mut da = vec![0.0; n * gu];
    let mut drec = if after { vec![0.0; n * gu] } else { Vec::new() };
    let width = pk.active.first().copied().unwrap_or(0);
    let mut carry = vec![0.0; width * u];
    let mut carry_c = if p.kind == CellKind::Lstm { vec![0.0; width * u] } else { Vec::new() };
    let mut drh = if before { vec![0.0; width * u] } else { Vec::new() };

    for t in (0..pk.steps()).rev() {
        let m = pk.active[t];
        let r0 = pk.offsets[t];
        // Rows that end at this step receive nothing from the future.
        let live = pk.active.get(t + 1).copied().unwrap_or(0);
        carry[live * u..m * u].fill(0.0);
        if !carry_c.is_empty() {
            carry_c[live * u..m * u].fill(0.0);
        }

        for s in 0..m {
            let r = r0 + s;
            let acts = &lt.acts[r * gu..(r + 1) * gu];
            let d = &mut da[r * gu..(r + 1) * gu];
            let hp = &lt.hprev[r * u..(r + 1) * u];
            let cr = &mut carry[s * u..(s + 1) * u];
            let upr = &up[r * u..(r + 1) * u];
            match p.kind {
                CellKind::SimpleRnn => {
                    for k in 0..u {
                        let dh = upr[k] + cr[k];
                        d[k] = dh * (1.0 - acts[k] * acts[k]);
                        cr[k] = 0.0;
                    }
                }
                CellKind::Lstm => {
                    let c = &lt.aux[r * u..(r + 1) * u];
                    let cp = &lt.cprev[r * u..(r + 1) * u];
                    let cc = &mut carry_c[s * u..(s + 1) * u];
                    for k in 0..u {
                        let dh = upr[k] + cr[k];
                        let (ig, fg, gg, og) = (acts[k], acts[u + k], acts[2 * u + k], acts[3 * u + k]);
                        let tc = c[k].tanh();
                        let dc = cc[k] + dh * og * (1.0 - tc * tc);
                        d[k] = dc * gg * ig * (1.0 - ig);
                        d[u + k] = dc * cp[k] * fg * (1.0 - fg);
                        d[2 * u + k] = dc * ig * (1.0 - gg * gg);
                        d[3 * u + k] = dh * tc * og * (1.0 - og);
                        cc[k] = dc * fg;
                        cr[k] = 0.0;
                    }
                }
                CellKind::Gru if after => {
                    let rec = &lt.aux[r * u..(r + 1) * u];
                    let dr_row = &mut drec[r * gu..(r + 1) * gu];
                    for k in 0..u {
                        let dh = upr[k] + cr[k];
                        let (z, rg, cand) = (acts[k], acts[u + k], acts[2 * u + k]);
                        let dac = dh * z * (1.0 - cand * cand);
                        let daz = dh * (cand - hp[k]) * z * (1.0 - z);
                        let dar = dac * rec[k] * rg * (1.0 - rg);
                        d[k] = daz;
                        d[u + k] = dar;
                        d[2 * u + k] = dac;
                        dr_row[k] = daz;
                        dr_row[u + k] = dar;
                        dr_row[2 * u + k] = dac * rg;
                        cr[k] = dh * (1.0 - z);
                    }
                }
                CellKind::Gru => {
                    for k in 0..u {
                        let dh = upr[k] + cr[k];
                        let (z, cand) = (acts[k], acts[2 * u + k]);
                        d[k] = dh * (cand - hp[k]) * z * (1.0 - z);
                        d[2 * u + k] = dh * z * (1.0 - cand * cand);
                        cr[k] = dh * (1.0 - z);
                    }
                }
            }
        }

        if before {
            // d(r ⊙ h_prev) flows into both the reset gate and the carry.
            let drh = &mut drh[..m * u];
            drh.fill(0.0);
            gemm_ab(m, u, u, &da[r0 * gu + 2 * u..], gu, &w.wh[2 * u * u..], u, drh, u);
            for s in 0..m {
                let r = r0 + s;
                let rg = &lt.acts[r * gu + u..r * gu + 2 * u];
                let hp = &lt.hprev[r * u..(r + 1) * u];
                for k in 0..u {
                    let dq = drh[s * u + k];
                    da[r * gu + u + k] = dq * hp[k] * rg[k] * (1.0 - rg[k]);
                    carry[s * u + k] += dq * rg[k];
                }
            }
        }

        if t > 0 {
            let (src, k) = match (after, before) {
                (true, _) => (&drec, gu),
                (_, true) => (&da, 2 * u),
                _ => (&da, gu),
            };
            gemm_ab(m, u, k, &src[r0 * gu..], gu, &w.wh, u, &mut carry[..m * u], u);
        }
    }

    // Weight gradients over every packed row at once.
    let mut gx = vec![0.0; gu * i];
    gemm_atb(gu, i, n, &da, gu, x, i, &mut gx, i);
    let mut gh = vec![0.0; gu * u];
    if before {
        gemm_atb(2 * u, u, n, &da, gu, &lt.hprev, u, &mut gh, u);
        gemm_atb(u, u, n, &da[2 * u..], gu, &lt.aux, u, &mut gh[2 * u * u..], u);
    } else {
        let src = if after { &drec } else { &da };
        gemm_atb(gu, u, n, src, gu, &lt.hprev, u, &mut gh, u);
    }
    let mut gb = vec![0.0; gu];
    let mut gbh = vec![0.0; if after { gu } else { 0 }];
    for r in 0..n {
        for (acc, v) in gb.iter_mut().zip(&da[r * gu..(r + 1) * gu]) {
            *acc += v;
        }
        if after {
            for (acc, v) in gbh.iter_mut().zip(&drec[r * gu..(r + 1) * gu]) {
                *acc += v;
            }
        }
    }
    for (q, gate) in g.gates.iter_mut().enumerate() {
        add(gate.input.as_mut_slice(), &gx[q * u * i..(q + 1) * u * i]);
        add(gate.recurrent.as_mut_slice(), &gh[q * u * u..(q + 1) * u * u]);
        add(&mut gate.bias, &gb[q * u..(q + 1) * u]);
        if let Some(rb) = &mut gate.recurrent_bias {
            add(rb, &gbh[q * u..(q + 1) * u]);
        }
    }

    let mut dx = Vec::new();
    if want_dx {
        dx = vec![0.0; n * i];
        gemm_ab(n, i, gu, &da, gu, &w.wx, i, &mut dx, i);
    }
    dx
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// ---- public entry points -----------------------------------------------

/// Everything the backward pass needs from a batched forward pass.
#[derive(Clone, Debug)]
pub struct BatchTape {
    packing: Packing,
    inputs: Vec<f64>,
    layers: Vec<LayerTape>,
    dropout: Option<Vec<f64>>,
    head_inputs: Vec<f64>,
    predictions: Vec<f64>,
}

impl BatchTape {
    /// Number of real timesteps in the batch.
    pub fn rows(&self) -> usize {
        self.packing.rows()
    }

    /// Predictions in packed (time-major, longest-first) order.
    pub fn packed_predictions(&self) -> &[f64] {
        &self.predictions
    }

    /// Predictions per sequence, in the caller's order.
    pub fn predictions(&self) -> Vec<Vec<f64>> {
        self.packing.unpack(&self.predictions)
    }

    /// Packs per-sequence scalars (e.g. targets) into the prediction order.
    pub fn pack(&self, per_sequence: &[&[f64]]) -> Result<Vec<f64>> {
        if per_sequence.len() != self.packing.lengths.len() {
            return Err(Error::shape("pack", self.packing.lengths.len(), per_sequence.len()));
        }
        for (b, s) in per_sequence.iter().enumerate() {
            if s.len() != self.packing.lengths[b] {
                return Err(Error::shape("pack", format!("sequence {b} of {}", self.packing.lengths[b]), s.len()));
            }
        }
        Ok(self.packing.pack(per_sequence, 1))
    }
}

/// Runs every sequence (`len × input_dim`, unpadded) through the network in
/// lockstep. In training mode, sequence `b` draws its dropout mask from
/// stream `b`, exactly as [`crate::model::forward_sequence`] does.
pub fn forward_batch(params: &ParamSet, inputs: &[&[f64]], mode: Mode) -> Result<BatchTape> {
    let input_dim = params.input_dim();
    check_params(params, input_dim)?;
    if let Some(bad) = inputs.iter().find(|x| x.len() % input_dim != 0) {
        return Err(Error::shape("forward_batch", format!("multiple of {input_dim}"), bad.len()));
    }
    let lengths: Vec<usize> = inputs.iter().map(|x| x.len() / input_dim).collect();
    let pk = Packing::new(&lengths);
    let packed = pk.pack(inputs, input_dim);

    let mut layers: Vec<LayerTape> = Vec::with_capacity(params.layers.len());
    for p in &params.layers {
        let x = layers.last().map_or(packed.as_slice(), |l| l.h.as_slice());
        let lt = layer_forward(p, &Stacked::new(p), x, &pk);
        layers.push(lt);
    }

    let units = params.head_weight.cols();
    let mut head_inputs = layers.last().map(|l| l.h.clone()).unwrap_or_default();
    let dropout = match mode {
        Mode::Train { dropout_rate, seed } if dropout_rate > 0.0 => {
            let mut mask = vec![0.0; pk.rows() * units];
            for (b, &len) in lengths.iter().enumerate() {
                let seq = dropout_mask(seed, b as u64, len * units, dropout_rate);
                for t in 0..len {
                    let r = pk.row(b, t);
                    mask[r * units..(r + 1) * units].copy_from_slice(&seq[t * units..(t + 1) * units]);
                }
            }
            for (h, m) in head_inputs.iter_mut().zip(&mask) {
                *h *= m;
            }
            Some(mask)
        }
        _ => None,
    };
    let wrow = params.head_weight.row(0);
    let predictions = head_inputs
        .chunks_exact(units)
        .map(|h| dot(wrow, h) + params.head_bias)
        .collect();
    Ok(BatchTape {
        packing: pk,
        inputs: packed,
        layers,
        dropout,
        head_inputs,
        predictions,
    })
}

/// Accumulates into `grads` the parameter gradient of a loss whose
/// derivative w.r.t. the packed predictions is `grad_pred`.
pub fn backward_batch(params: &ParamSet, tape: &BatchTape, grad_pred: &[f64], grads: &mut ParamSet) -> Result<()> {
    let n = tape.rows();
    if grad_pred.len() != n {
        return Err(Error::TapeMismatch(format!("{} prediction gradients for {n} packed rows", grad_pred.len())));
    }
    if tape.layers.len() != params.layers.len() || !grads.matches_shape(params) {
        return Err(Error::TapeMismatch("tape, params and gradient buffer disagree".into()));
    }
    let units = params.head_weight.cols();
    let wrow = params.head_weight.row(0);
    let mut up = vec![0.0; n * units];
    for r in 0..n {
        let gp = grad_pred[r];
        if gp == 0.0 {
            continue;
        }
        let h = &tape.head_inputs[r * units..(r + 1) * units];
        add_scaled(grads.head_weight.as_mut_slice(), gp, h);
        grads.head_bias += gp;
        let ur = &mut up[r * units..(r + 1) * units];
        for (o, w) in ur.iter_mut().zip(wrow) {
            *o = gp * w;
        }
        if let Some(mask) = &tape.dropout {
            for (o, m) in ur.iter_mut().zip(&mask[r * units..(r + 1) * units]) {
                *o *= m;
            }
        }
    }
    for l in (0..params.layers.len()).rev() {
        let p = &params.layers[l];
        let x = if l == 0 { &tape.inputs } else { &tape.layers[l - 1].h };
        up = layer_backward(p, &Stacked::new(p), x, &tape.layers[l], &tape.packing, &up, &mut grads.layers[l], l > 0);
    }
    Ok(())
}

fn add_scaled(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}
