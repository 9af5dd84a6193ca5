//! Simple RNN, LSTM and GRU cells: one forward step plus its analytic
//! backward step.
//!
//! Every gate keeps a separate input-side kernel `W` (units × input_dim) and
//! recurrent kernel `U` (units × units). Gate order is fixed per kind:
//!
//! * simple RNN: `h`
//! * LSTM: `i`, `f`, `c`, `o`
//! * GRU: `z`, `r`, `h`
//!
//! The GRU blends as `h_t = (1 - z) ⊙ h_{t-1} + z ⊙ h'`. With
//! [`GruVariant::ResetAfter`] the reset gate multiplies `U_h h_{t-1} + b_hh`
//! and every gate carries a second, recurrent-side bias; with
//! [`GruVariant::ResetBefore`] the reset gate is applied to `h_{t-1}` before
//! the recurrent product and each gate has a single bias.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid_scalar, Matrix, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    SimpleRnn,
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::SimpleRnn, CellKind::Lstm, CellKind::Gru];

    pub fn gate_names(self) -> &'static [&'static str] {
        match self {
            CellKind::SimpleRnn => &["h"],
            CellKind::Lstm => &["i", "f", "c", "o"],
            CellKind::Gru => &["z", "r", "h"],
        }
    }

    pub fn gate_count(self) -> usize {
        self.gate_names().len()
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::SimpleRnn => "simplernn",
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "simplernn" | "simple" | "rnn" => Ok(CellKind::SimpleRnn),
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(Error::Config(format!("unknown cell kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GruVariant {
    ResetBefore,
    #[default]
    ResetAfter,
}

/// Weights of a single gate.
#[derive(Clone, Debug, PartialEq)]
pub struct Gate {
    pub input: Matrix,
    pub recurrent: Matrix,
    pub bias: Vec<f64>,
    /// Present only for reset-after GRU cells.
    pub recurrent_bias: Option<Vec<f64>>,
}

impl Gate {
    fn zeros(input_dim: usize, units: usize, dual_bias: bool) -> Self {
        Gate {
            input: Matrix::zeros(units, input_dim),
            recurrent: Matrix::zeros(units, units),
            bias: vec![0.0; units],
            recurrent_bias: dual_bias.then(|| vec![0.0; units]),
        }
    }

    /// Slices in flattening order.
    fn slices(&self) -> impl Iterator<Item = &[f64]> {
        [
            Some(self.input.as_slice()),
            Some(self.recurrent.as_slice()),
            Some(self.bias.as_slice()),
            self.recurrent_bias.as_deref(),
        ]
        .into_iter()
        .flatten()
    }

    fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        [
            Some(self.input.as_mut_slice()),
            Some(self.recurrent.as_mut_slice()),
            Some(self.bias.as_mut_slice()),
            self.recurrent_bias.as_deref_mut(),
        ]
        .into_iter()
        .flatten()
    }

    /// `W x + U h + b (+ b_rec)`
    fn affine(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = self.bias.clone();
        if let Some(rb) = &self.recurrent_bias {
            for (ai, bi) in a.iter_mut().zip(rb) {
                *ai += bi;
            }
        }
        self.input.mul_vec_acc(x, &mut a);
        self.recurrent.mul_vec_acc(h, &mut a);
        a
    }

    /// Accumulates the gradient of a pre-activation `da` through `W x + U h + b`.
    fn backprop(&self, da: &[f64], x: &[f64], h: &[f64], grad: &mut Gate, dx: &mut [f64], dh: &mut [f64]) {
        grad.input.outer_acc(da, x);
        grad.recurrent.outer_acc(da, h);
        add_into(&mut grad.bias, da);
        if let Some(rb) = &mut grad.recurrent_bias {
            add_into(rb, da);
        }
        self.input.mul_t_vec_acc(da, dx);
        self.recurrent.mul_t_vec_acc(da, dh);
    }
}

/// Parameters of one recurrent layer. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input_dim: usize,
    pub units: usize,
    pub gru_variant: GruVariant,
    pub gates: Vec<Gate>,
}

impl CellParams {
    pub fn zeros(kind: CellKind, input_dim: usize, units: usize, gru_variant: GruVariant) -> Self {
        let dual = kind == CellKind::Gru && gru_variant == GruVariant::ResetAfter;
        CellParams {
            kind,
            input_dim,
            units,
            gru_variant,
            gates: (0..kind.gate_count())
                .map(|_| Gate::zeros(input_dim, units, dual))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        CellParams::zeros(self.kind, self.input_dim, self.units, self.gru_variant)
    }

    pub fn gate(&self, name: &str) -> Option<&Gate> {
        let idx = self.kind.gate_names().iter().position(|g| *g == name)?;
        self.gates.get(idx)
    }

    pub fn gate_mut(&mut self, name: &str) -> Option<&mut Gate> {
        let idx = self.kind.gate_names().iter().position(|g| *g == name)?;
        self.gates.get_mut(idx)
    }

    /// Scalar parameter count of a layer, from shapes alone.
    pub fn count_for(kind: CellKind, input_dim: usize, units: usize, gru_variant: GruVariant) -> usize {
        let (i, u) = (input_dim, units);
        match kind {
            CellKind::SimpleRnn => u * (i + u) + u,
            CellKind::Lstm => 4 * (u * (i + u) + u),
            CellKind::Gru => match gru_variant {
                GruVariant::ResetAfter => 3 * u * (i + u) + 6 * u,
                GruVariant::ResetBefore => 3 * u * (i + u) + 3 * u,
            },
        }
    }

    pub fn param_count(&self) -> usize {
        self.slices().map(<[f64]>::len).sum()
    }

    /// All parameter slices in gate-then-(input, recurrent, bias, recurrent bias) order.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.gates.iter().flat_map(Gate::slices)
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.gates.iter_mut().flat_map(Gate::slices_mut)
    }

    pub fn same_shape(&self, other: &CellParams) -> bool {
        self.kind == other.kind
            && self.input_dim == other.input_dim
            && self.units == other.units
            && (self.kind != CellKind::Gru || self.gru_variant == other.gru_variant)
    }

    fn check_step(&self, x: &[f64], prev: &CellState) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::shape("cell input", format!("input_dim {}", self.input_dim), format!("x len {}", x.len())));
        }
        if prev.h.len() != self.units {
            return Err(Error::shape("cell state", format!("units {}", self.units), format!("h len {}", prev.h.len())));
        }
        match (&prev.c, self.kind) {
            (Some(c), CellKind::Lstm) if c.len() == self.units => Ok(()),
            (None, CellKind::Lstm) => Err(Error::shape("cell state", "lstm state with c", "missing c")),
            (Some(c), CellKind::Lstm) => Err(Error::shape("cell state", format!("units {}", self.units), format!("c len {}", c.len()))),
            (Some(_), _) => Err(Error::shape("cell state", format!("{} state without c", self.kind), "c present")),
            (None, _) => Ok(()),
        }
    }
}

/// Recurrent state carried between timesteps; `c` is present only for LSTM.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vector,
    pub c: Option<Vector>,
}

impl CellState {
    pub fn zeros(kind: CellKind, units: usize) -> Self {
        CellState {
            h: Vector::zeros(units),
            c: (kind == CellKind::Lstm).then(|| Vector::zeros(units)),
        }
    }
}

/// Activations cached by a forward step for its backward step.
#[derive(Clone, Debug, PartialEq)]
pub enum CellTape {
    Simple {
        x: Vec<f64>,
        h_prev: Vec<f64>,
        h: Vec<f64>,
    },
    Lstm {
        x: Vec<f64>,
        h_prev: Vec<f64>,
        c_prev: Vec<f64>,
        i: Vec<f64>,
        f: Vec<f64>,
        g: Vec<f64>,
        o: Vec<f64>,
        c: Vec<f64>,
        tanh_c: Vec<f64>,
        h: Vec<f64>,
    },
    Gru {
        x: Vec<f64>,
        h_prev: Vec<f64>,
        z: Vec<f64>,
        r: Vec<f64>,
        candidate: Vec<f64>,
        /// Reset-after: `U_h h_prev + b_hh`. Reset-before: `r ⊙ h_prev`.
        reset_term: Vec<f64>,
        h: Vec<f64>,
    },
}

impl CellTape {
    pub fn kind(&self) -> CellKind {
        match self {
            CellTape::Simple { .. } => CellKind::SimpleRnn,
            CellTape::Lstm { .. } => CellKind::Lstm,
            CellTape::Gru { .. } => CellKind::Gru,
        }
    }

    pub fn input(&self) -> &[f64] {
        match self {
            CellTape::Simple { x, .. } | CellTape::Lstm { x, .. } | CellTape::Gru { x, .. } => x,
        }
    }

    pub fn output(&self) -> &[f64] {
        match self {
            CellTape::Simple { h, .. } | CellTape::Lstm { h, .. } | CellTape::Gru { h, .. } => h,
        }
    }

    /// The state this step started from.
    pub fn prev_state(&self) -> CellState {
        match self {
            CellTape::Simple { h_prev, .. } | CellTape::Gru { h_prev, .. } => CellState {
                h: h_prev.clone().into(),
                c: None,
            },
            CellTape::Lstm { h_prev, c_prev, .. } => CellState {
                h: h_prev.clone().into(),
                c: Some(c_prev.clone().into()),
            },
        }
    }

    /// The state this step produced.
    pub fn state(&self) -> CellState {
        match self {
            CellTape::Simple { h, .. } | CellTape::Gru { h, .. } => CellState {
                h: h.clone().into(),
                c: None,
            },
            CellTape::Lstm { h, c, .. } => CellState {
                h: h.clone().into(),
                c: Some(c.clone().into()),
            },
        }
    }
}

/// Gradient with respect to the incoming state of a step.
pub type StateGrad = CellState;

fn add_into(acc: &mut [f64], v: &[f64]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += b;
    }
}

fn check_kind(p: &CellParams, kind: CellKind) -> Result<()> {
    if p.kind != kind {
        return Err(Error::TapeMismatch(format!("{} step called with {} params", kind, p.kind)));
    }
    Ok(())
}

pub fn simple_forward(x: &[f64], prev: &CellState, p: &CellParams) -> Result<(CellState, CellTape)> {
    check_kind(p, CellKind::SimpleRnn)?;
    p.check_step(x, prev)?;
    let h: Vec<f64> = p.gates[0].affine(x, &prev.h).into_iter().map(f64::tanh).collect();
    let tape = CellTape::Simple {
        x: x.to_vec(),
        h_prev: prev.h.to_vec(),
        h,
    };
    Ok((tape.state(), tape))
}

pub fn lstm_forward(x: &[f64], prev: &CellState, p: &CellParams) -> Result<(CellState, CellTape)> {
    check_kind(p, CellKind::Lstm)?;
    p.check_step(x, prev)?;
    let h_prev = &prev.h;
    let c_prev = prev.c.as_ref().expect("checked above");
    let i: Vec<f64> = p.gates[0].affine(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let f: Vec<f64> = p.gates[1].affine(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let g: Vec<f64> = p.gates[2].affine(x, h_prev).into_iter().map(f64::tanh).collect();
    let o: Vec<f64> = p.gates[3].affine(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let c: Vec<f64> = (0..p.units).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
    let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h: Vec<f64> = o.iter().zip(&tanh_c).map(|(o, t)| o * t).collect();
    let tape = CellTape::Lstm {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        i,
        f,
        g,
        o,
        c,
        tanh_c,
        h,
    };
    Ok((tape.state(), tape))
}

pub fn gru_forward(x: &[f64], prev: &CellState, p: &CellParams) -> Result<(CellState, CellTape)> {
    check_kind(p, CellKind::Gru)?;
    p.check_step(x, prev)?;
    let h_prev: &[f64] = &prev.h;
    let z: Vec<f64> = p.gates[0].affine(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let r: Vec<f64> = p.gates[1].affine(x, h_prev).into_iter().map(sigmoid_scalar).collect();
    let cand_gate = &p.gates[2];
    let mut a = cand_gate.bias.clone();
    cand_gate.input.mul_vec_acc(x, &mut a);
    let reset_term = match p.gru_variant {
        GruVariant::ResetAfter => {
            let mut rec = cand_gate
                .recurrent_bias
                .clone()
                .unwrap_or_else(|| vec![0.0; p.units]);
            cand_gate.recurrent.mul_vec_acc(h_prev, &mut rec);
            for k in 0..p.units {
                a[k] += r[k] * rec[k];
            }
            rec
        }
        GruVariant::ResetBefore => {
            let rh: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
            cand_gate.recurrent.mul_vec_acc(&rh, &mut a);
            rh
        }
    };
    let candidate: Vec<f64> = a.into_iter().map(f64::tanh).collect();
    let h: Vec<f64> = (0..p.units)
        .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * candidate[k])
        .collect();
    let tape = CellTape::Gru {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        candidate,
        reset_term,
        h,
    };
    Ok((tape.state(), tape))
}

/// One forward step, dispatched on the parameters' cell kind.
pub fn cell_forward(x: &[f64], prev: &CellState, p: &CellParams) -> Result<(CellState, CellTape)> {
    match p.kind {
        CellKind::SimpleRnn => simple_forward(x, prev, p),
        CellKind::Lstm => lstm_forward(x, prev, p),
        CellKind::Gru => gru_forward(x, prev, p),
    }
}

/// Backward step that accumulates parameter gradients into `grads`.
///
/// Returns the gradient with respect to the step input and incoming state.
pub fn cell_backward_acc(
    tape: &CellTape,
    grad_h: &[f64],
    grad_c: Option<&[f64]>,
    p: &CellParams,
    grads: &mut CellParams,
) -> Result<(Vector, StateGrad)> {
    if tape.kind() != p.kind {
        return Err(Error::TapeMismatch(format!("{} tape with {} params", tape.kind(), p.kind)));
    }
    if !grads.same_shape(p) {
        return Err(Error::TapeMismatch("gradient buffer shape differs from params".into()));
    }
    let u = p.units;
    if grad_h.len() != u || grad_c.is_some_and(|g| g.len() != u) {
        return Err(Error::shape("cell_backward", format!("units {u}"), format!("grad len {}", grad_h.len())));
    }
    if tape.input().len() != p.input_dim || tape.output().len() != u {
        return Err(Error::TapeMismatch("tape shapes differ from params".into()));
    }
    let mut dx = vec![0.0; p.input_dim];
    let mut dh_prev = vec![0.0; u];
    let state_grad = match tape {
        CellTape::Simple { x, h_prev, h } => {
            let da: Vec<f64> = (0..u).map(|k| grad_h[k] * (1.0 - h[k] * h[k])).collect();
            p.gates[0].backprop(&da, x, h_prev, &mut grads.gates[0], &mut dx, &mut dh_prev);
            CellState { h: dh_prev.into(), c: None }
        }
        CellTape::Lstm {
            x,
            h_prev,
            c_prev,
            i,
            f,
            g,
            o,
            tanh_c,
            ..
        } => {
            let mut da_i = vec![0.0; u];
            let mut da_f = vec![0.0; u];
            let mut da_g = vec![0.0; u];
            let mut da_o = vec![0.0; u];
            let mut dc_prev = vec![0.0; u];
            for k in 0..u {
                let dc = grad_c.map_or(0.0, |g| g[k]) + grad_h[k] * o[k] * (1.0 - tanh_c[k] * tanh_c[k]);
                let d_o = grad_h[k] * tanh_c[k];
                da_i[k] = dc * g[k] * i[k] * (1.0 - i[k]);
                da_f[k] = dc * c_prev[k] * f[k] * (1.0 - f[k]);
                da_g[k] = dc * i[k] * (1.0 - g[k] * g[k]);
                da_o[k] = d_o * o[k] * (1.0 - o[k]);
                dc_prev[k] = dc * f[k];
            }
            for (idx, da) in [da_i, da_f, da_g, da_o].iter().enumerate() {
                p.gates[idx].backprop(da, x, h_prev, &mut grads.gates[idx], &mut dx, &mut dh_prev);
            }
            CellState {
                h: dh_prev.into(),
                c: Some(dc_prev.into()),
            }
        }
        CellTape::Gru {
            x,
            h_prev,
            z,
            r,
            candidate,
            reset_term,
            ..
        } => {
            let mut da_z = vec![0.0; u];
            let mut da_h = vec![0.0; u];
            for k in 0..u {
                dh_prev[k] = grad_h[k] * (1.0 - z[k]);
                da_z[k] = grad_h[k] * (candidate[k] - h_prev[k]) * z[k] * (1.0 - z[k]);
                da_h[k] = grad_h[k] * z[k] * (1.0 - candidate[k] * candidate[k]);
            }
            let cand = &p.gates[2];
            let cand_grad = &mut grads.gates[2];
            cand_grad.input.outer_acc(&da_h, x);
            add_into(&mut cand_grad.bias, &da_h);
            cand.input.mul_t_vec_acc(&da_h, &mut dx);
            let mut da_r = vec![0.0; u];
            match p.gru_variant {
                GruVariant::ResetAfter => {
                    let d_rec: Vec<f64> = (0..u).map(|k| da_h[k] * r[k]).collect();
                    cand_grad.recurrent.outer_acc(&d_rec, h_prev);
                    if let Some(rb) = &mut cand_grad.recurrent_bias {
                        add_into(rb, &d_rec);
                    }
                    cand.recurrent.mul_t_vec_acc(&d_rec, &mut dh_prev);
                    for k in 0..u {
                        da_r[k] = da_h[k] * reset_term[k] * r[k] * (1.0 - r[k]);
                    }
                }
                GruVariant::ResetBefore => {
                    cand_grad.recurrent.outer_acc(&da_h, reset_term);
                    let mut d_rh = vec![0.0; u];
                    cand.recurrent.mul_t_vec_acc(&da_h, &mut d_rh);
                    for k in 0..u {
                        dh_prev[k] += d_rh[k] * r[k];
                        da_r[k] = d_rh[k] * h_prev[k] * r[k] * (1.0 - r[k]);
                    }
                }
            }
            p.gates[0].backprop(&da_z, x, h_prev, &mut grads.gates[0], &mut dx, &mut dh_prev);
            p.gates[1].backprop(&da_r, x, h_prev, &mut grads.gates[1], &mut dx, &mut dh_prev);
            CellState { h: dh_prev.into(), c: None }
        }
    };
    Ok((dx.into(), state_grad))
}

/// Analytic gradients of one cached forward step.
pub fn cell_backward(
    tape: &CellTape,
    grad_h: &[f64],
    grad_c: Option<&[f64]>,
    p: &CellParams,
) -> Result<(Vector, StateGrad, CellParams)> {
    let mut grads = p.zeros_like();
    let (dx, dprev) = cell_backward_acc(tape, grad_h, grad_c, p, &mut grads)?;
    Ok((dx, dprev, grads))
}
