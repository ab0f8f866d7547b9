// SPDX-License-Identifier: Apache-2.0

//! GRU and LSTM cells, and the bidirectional encoder built from them.
//!
//! Every gate is `W x + U h + b` with `W: [h, d]`, `U: [h, h]`, `b: [h]`,
//! stored as `{prefix}.{gate}.w`, `.u` and `.b`.
//!
//! GRU:  `z = σ(·)`, `r = σ(·)`, `n = tanh(W_n x + U_n (r ⊙ h) + b_n)`,
//! `h' = (1 − z) ⊙ n + z ⊙ h`.
//!
//! LSTM: `i, f, o = σ(·)`, `g = tanh(·)`, `c' = f ⊙ c + i ⊙ g`,
//! `h' = o ⊙ tanh(c')`.

use serde::{Deserialize, Serialize};

use super::tensor::{matvec, matvec_t_acc, outer_acc, sigmoid};
use super::{Gradients, Initializer, ModelParameters, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    fn gates(self) -> &'static [&'static str] {
        match self {
            CellKind::Gru => &["z", "r", "n"],
            CellKind::Lstm => &["i", "f", "o", "g"],
        }
    }
}

struct Gate<'a> {
    name: String,
    w: &'a Tensor,
    u: &'a Tensor,
    b: &'a Tensor,
}

impl<'a> Gate<'a> {
    fn load(params: &'a ModelParameters, prefix: &str, gate: &str) -> Result<Self, NnError> {
        let name = format!("{prefix}.{gate}");
        let w = params.get(&format!("{name}.w"))?;
        let u = params.get(&format!("{name}.u"))?;
        let b = params.get(&format!("{name}.b"))?;
        let h = u.rows();
        u.require_shape(&[h, h], &format!("{name}.u"))?;
        b.require_shape(&[h], &format!("{name}.b"))?;
        if w.rows() != h || w.shape().len() != 2 {
            return Err(NnError::ShapeMismatch(format!(
                "{name}.w: expected [{h}, d], got {:?}",
                w.shape()
            )));
        }
        Ok(Gate { name, w, u, b })
    }

    fn pre(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut a = matvec(self.w, x);
        for ((ai, ui), bi) in a.iter_mut().zip(matvec(self.u, h)).zip(self.b.data()) {
            *ai += ui + bi;
        }
        a
    }

    /// Accumulate parameter grads and push `Wᵀ da`, `Uᵀ da` into `dx`, `dh`.
    fn backward(
        &self,
        da: &[f64],
        x: &[f64],
        h: &[f64],
        grads: &mut Gradients,
        dx: &mut [f64],
        dh: &mut [f64],
    ) {
        outer_acc(
            grads.slot(&format!("{}.w", self.name), self.w.shape()),
            da,
            x,
        );
        outer_acc(
            grads.slot(&format!("{}.u", self.name), self.u.shape()),
            da,
            h,
        );
        let gb = grads.slot(&format!("{}.b", self.name), self.b.shape());
        for (g, d) in gb.data_mut().iter_mut().zip(da) {
            *g += d;
        }
        matvec_t_acc(self.w, da, dx);
        matvec_t_acc(self.u, da, dh);
    }
}

/// Register the parameters of one cell under `prefix`.
pub fn init_cell(
    params: &mut ModelParameters,
    init: &mut Initializer,
    kind: CellKind,
    prefix: &str,
    input: usize,
    hidden: usize,
) -> Result<(), NnError> {
    for gate in kind.gates() {
        params.insert(format!("{prefix}.{gate}.w"), init.matrix(hidden, input))?;
        params.insert(format!("{prefix}.{gate}.u"), init.matrix(hidden, hidden))?;
        params.insert(format!("{prefix}.{gate}.b"), Tensor::zeros(&[hidden]))?;
    }
    Ok(())
}

/// Recurrent state; `c` is empty for GRU.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepCache {
    x: Vec<f64>,
    prev: CellState,
    acts: Vec<Vec<f64>>,
    next_c: Vec<f64>,
}

/// A loaded cell: gate order is the one in [`CellKind::gates`].
pub struct Cell<'a> {
    kind: CellKind,
    gates: Vec<Gate<'a>>,
}

impl<'a> Cell<'a> {
    pub fn load(
        params: &'a ModelParameters,
        kind: CellKind,
        prefix: &str,
    ) -> Result<Self, NnError> {
        let gates = kind
            .gates()
            .iter()
            .map(|g| Gate::load(params, prefix, g))
            .collect::<Result<Vec<_>, _>>()?;
        let (h, d) = (gates[0].u.rows(), gates[0].w.cols());
        if gates.iter().any(|g| g.u.rows() != h || g.w.cols() != d) {
            return Err(NnError::ShapeMismatch(format!(
                "{prefix}: inconsistent gates"
            )));
        }
        Ok(Cell { kind, gates })
    }

    pub fn hidden(&self) -> usize {
        self.gates[0].u.rows()
    }

    pub fn input(&self) -> usize {
        self.gates[0].w.cols()
    }

    pub fn zero_state(&self) -> CellState {
        let h = self.hidden();
        CellState {
            h: vec![0.0; h],
            c: if self.kind == CellKind::Lstm {
                vec![0.0; h]
            } else {
                Vec::new()
            },
        }
    }

    fn check(&self, x: &[f64], state: &CellState) -> Result<(), NnError> {
        let want_c = if self.kind == CellKind::Lstm {
            self.hidden()
        } else {
            0
        };
        if x.len() != self.input() || state.h.len() != self.hidden() || state.c.len() != want_c {
            return Err(NnError::ShapeMismatch(format!(
                "cell step: x[{}] h[{}] c[{}] for a {}→{} cell",
                x.len(),
                state.h.len(),
                state.c.len(),
                self.input(),
                self.hidden()
            )));
        }
        Ok(())
    }

    pub fn step(&self, x: &[f64], state: &CellState) -> Result<(CellState, StepCache), NnError> {
        self.check(x, state)?;
        let h = &state.h;
        let (next, acts) = match self.kind {
            CellKind::Gru => {
                let z: Vec<f64> = self.gates[0].pre(x, h).into_iter().map(sigmoid).collect();
                let r: Vec<f64> = self.gates[1].pre(x, h).into_iter().map(sigmoid).collect();
                let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
                let n: Vec<f64> = self.gates[2]
                    .pre(x, &rh)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                let next_h = (0..h.len())
                    .map(|k| (1.0 - z[k]) * n[k] + z[k] * h[k])
                    .collect();
                (
                    CellState {
                        h: next_h,
                        c: Vec::new(),
                    },
                    vec![z, r, n],
                )
            }
            CellKind::Lstm => {
                let sig = |g: &Gate| -> Vec<f64> { g.pre(x, h).into_iter().map(sigmoid).collect() };
                let i = sig(&self.gates[0]);
                let f = sig(&self.gates[1]);
                let o = sig(&self.gates[2]);
                let g: Vec<f64> = self.gates[3].pre(x, h).into_iter().map(f64::tanh).collect();
                let c: Vec<f64> = (0..h.len())
                    .map(|k| f[k] * state.c[k] + i[k] * g[k])
                    .collect();
                let next_h = (0..h.len()).map(|k| o[k] * c[k].tanh()).collect();
                (CellState { h: next_h, c }, vec![i, f, o, g])
            }
        };
        let cache = StepCache {
            x: x.to_vec(),
            prev: state.clone(),
            acts,
            next_c: next.c.clone(),
        };
        Ok((next, cache))
    }

    /// Returns `(dx, d_prev_state)` given the gradient w.r.t. the step output.
    pub fn backward(
        &self,
        cache: &StepCache,
        d_next: &CellState,
        grads: &mut Gradients,
    ) -> (Vec<f64>, CellState) {
        let hsz = self.hidden();
        let h = &cache.prev.h;
        let mut dx = vec![0.0; cache.x.len()];
        let mut dh = vec![0.0; hsz];
        match self.kind {
            CellKind::Gru => {
                let (z, r, n) = (&cache.acts[0], &cache.acts[1], &cache.acts[2]);
                let dhn = &d_next.h;
                let mut da_z = vec![0.0; hsz];
                let mut da_n = vec![0.0; hsz];
                for k in 0..hsz {
                    dh[k] += dhn[k] * z[k];
                    let dz = dhn[k] * (h[k] - n[k]);
                    da_z[k] = dz * z[k] * (1.0 - z[k]);
                    da_n[k] = dhn[k] * (1.0 - z[k]) * (1.0 - n[k] * n[k]);
                }
                let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
                let mut d_rh = vec![0.0; hsz];
                self.gates[2].backward(&da_n, &cache.x, &rh, grads, &mut dx, &mut d_rh);
                let mut da_r = vec![0.0; hsz];
                for k in 0..hsz {
                    dh[k] += d_rh[k] * r[k];
                    da_r[k] = d_rh[k] * h[k] * r[k] * (1.0 - r[k]);
                }
                self.gates[0].backward(&da_z, &cache.x, h, grads, &mut dx, &mut dh);
                self.gates[1].backward(&da_r, &cache.x, h, grads, &mut dx, &mut dh);
                (
                    dx,
                    CellState {
                        h: dh,
                        c: Vec::new(),
                    },
                )
            }
            CellKind::Lstm => {
                let (i, f, o, g) = (
                    &cache.acts[0],
                    &cache.acts[1],
                    &cache.acts[2],
                    &cache.acts[3],
                );
                let mut dc_prev = vec![0.0; hsz];
                let mut da: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; hsz]);
                for k in 0..hsz {
                    let tc = cache.next_c[k].tanh();
                    let dc = d_next.c[k] + d_next.h[k] * o[k] * (1.0 - tc * tc);
                    let d_o = d_next.h[k] * tc;
                    da[0][k] = dc * g[k] * i[k] * (1.0 - i[k]);
                    da[1][k] = dc * cache.prev.c[k] * f[k] * (1.0 - f[k]);
                    da[2][k] = d_o * o[k] * (1.0 - o[k]);
                    da[3][k] = dc * i[k] * (1.0 - g[k] * g[k]);
                    dc_prev[k] = dc * f[k];
                }
                for (gate, d) in self.gates.iter().zip(&da) {
                    gate.backward(d, &cache.x, h, grads, &mut dx, &mut dh);
                }
                (dx, CellState { h: dh, c: dc_prev })
            }
        }
    }
}

/// One GRU step from parameters stored under `prefix`.
pub fn gru_step(
    params: &ModelParameters,
    prefix: &str,
    x: &[f64],
    h_prev: &[f64],
) -> Result<Vec<f64>, NnError> {
    let cell = Cell::load(params, CellKind::Gru, prefix)?;
    let state = CellState {
        h: h_prev.to_vec(),
        c: Vec::new(),
    };
    Ok(cell.step(x, &state)?.0.h)
}

/// One LSTM step from parameters stored under `prefix`; returns `(h, c)`.
pub fn lstm_step(
    params: &ModelParameters,
    prefix: &str,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let cell = Cell::load(params, CellKind::Lstm, prefix)?;
    let state = CellState {
        h: h_prev.to_vec(),
        c: c_prev.to_vec(),
    };
    let next = cell.step(x, &state)?.0;
    Ok((next.h, next.c))
}

/// Register a bidirectional encoder (`{prefix}.fwd`, `{prefix}.bwd`).
pub fn init_bidirectional(
    params: &mut ModelParameters,
    init: &mut Initializer,
    kind: CellKind,
    prefix: &str,
    input: usize,
    hidden: usize,
) -> Result<(), NnError> {
    init_cell(params, init, kind, &format!("{prefix}.fwd"), input, hidden)?;
    init_cell(params, init, kind, &format!("{prefix}.bwd"), input, hidden)
}

pub struct BiCache {
    fwd: Vec<StepCache>,
    bwd: Vec<StepCache>,
}

/// Left→right and right→left passes, concatenated per position: `[len, 2h]`.
pub fn bidirectional_encode(
    kind: CellKind,
    params: &ModelParameters,
    prefix: &str,
    x: &Tensor,
) -> Result<(Tensor, BiCache), NnError> {
    let len = x.rows();
    if len == 0 || x.is_empty() {
        return Err(NnError::EmptySequence);
    }
    let fwd = Cell::load(params, kind, &format!("{prefix}.fwd"))?;
    let bwd = Cell::load(params, kind, &format!("{prefix}.bwd"))?;
    let h = fwd.hidden();
    if bwd.hidden() != h {
        return Err(NnError::ShapeMismatch(format!(
            "{prefix}: direction sizes differ"
        )));
    }
    let mut out = Tensor::zeros(&[len, 2 * h]);
    let mut cache = BiCache {
        fwd: Vec::with_capacity(len),
        bwd: Vec::with_capacity(len),
    };
    let mut state = fwd.zero_state();
    for t in 0..len {
        let (next, c) = fwd.step(x.row(t), &state)?;
        out.row_mut(t)[..h].copy_from_slice(&next.h);
        cache.fwd.push(c);
        state = next;
    }
    let mut state = bwd.zero_state();
    for t in (0..len).rev() {
        let (next, c) = bwd.step(x.row(t), &state)?;
        out.row_mut(t)[h..].copy_from_slice(&next.h);
        cache.bwd.push(c);
        state = next;
    }
    Ok((out, cache))
}

/// Backpropagate `grad_out: [len, 2h]` through time; returns `dx: [len, d]`.
pub fn bidirectional_backward(
    kind: CellKind,
    params: &ModelParameters,
    prefix: &str,
    cache: &BiCache,
    grad_out: &Tensor,
    grads: &mut Gradients,
) -> Result<Tensor, NnError> {
    let fwd = Cell::load(params, kind, &format!("{prefix}.fwd"))?;
    let bwd = Cell::load(params, kind, &format!("{prefix}.bwd"))?;
    let (h, d) = (fwd.hidden(), fwd.input());
    let len = cache.fwd.len();
    grad_out.require_shape(&[len, 2 * h], "bidirectional grad")?;
    let mut dx = Tensor::zeros(&[len, d]);

    let mut carry = fwd.zero_state();
    for t in (0..len).rev() {
        for (c, g) in carry.h.iter_mut().zip(&grad_out.row(t)[..h]) {
            *c += g;
        }
        let (dxt, prev) = fwd.backward(&cache.fwd[t], &carry, grads);
        for (a, b) in dx.row_mut(t).iter_mut().zip(&dxt) {
            *a += b;
        }
        carry = prev;
    }
    // cache.bwd[k] processed position len-1-k
    let mut carry = bwd.zero_state();
    for k in (0..len).rev() {
        let t = len - 1 - k;
        for (c, g) in carry.h.iter_mut().zip(&grad_out.row(t)[h..]) {
            *c += g;
        }
        let (dxt, prev) = bwd.backward(&cache.bwd[k], &carry, grads);
        for (a, b) in dx.row_mut(t).iter_mut().zip(&dxt) {
            *a += b;
        }
        carry = prev;
    }
    Ok(dx)
}
