//! Gated recurrent cells with explicit backpropagation through one step.
//!
//! Parameters of a cell are one flat slice: `W` (G·H × D), `U` (G·H × H),
//! `b` (G·H), gates stacked in the order listed on [`CellKind`].

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    /// Gates z, r, n; `n = tanh(W_n x + U_n (r ⊙ h) + b_n)`.
    #[default]
    Gru,
    /// Gates i, f, g, o; state is `[h; c]`.
    Lstm,
}

impl CellKind {
    fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    pub fn state_len(self, hidden: usize) -> usize {
        match self {
            CellKind::Gru => hidden,
            CellKind::Lstm => 2 * hidden,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Cell {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
}

/// Activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    x: Vec<f64>,
    state: Vec<f64>,
    /// Post-nonlinearity gate values, G·H entries.
    gates: Vec<f64>,
    /// GRU: r ⊙ h. LSTM: tanh(c').
    aux: Vec<f64>,
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `out += M v` for row-major `M` (rows × v.len()).
pub(crate) fn matvec_add(m: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = v.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += Mᵀ g` for row-major `M` (g.len() × out.len()).
pub(crate) fn matvec_t_add(m: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&gi, row) in g.iter().zip(m.chunks_exact(cols)) {
        if gi != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += gi * a;
            }
        }
    }
}

/// `M += g vᵀ`.
pub(crate) fn outer_add(m: &mut [f64], g: &[f64], v: &[f64]) {
    let cols = v.len();
    for (&gi, row) in g.iter().zip(m.chunks_exact_mut(cols)) {
        if gi != 0.0 {
            for (a, b) in row.iter_mut().zip(v) {
                *a += gi * b;
            }
        }
    }
}

impl Cell {
    pub fn num_params(&self) -> usize {
        let gh = self.kind.gates() * self.hidden;
        gh * self.input + gh * self.hidden + gh
    }

    pub fn state_len(&self) -> usize {
        self.kind.state_len(self.hidden)
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64]) {
        let gh = self.kind.gates() * self.hidden;
        let (w, rest) = p.split_at(gh * self.input);
        let (u, b) = rest.split_at(gh * self.hidden);
        (w, u, b)
    }

    fn split_mut<'a>(&self, p: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64], &'a mut [f64]) {
        let gh = self.kind.gates() * self.hidden;
        let (w, rest) = p.split_at_mut(gh * self.input);
        let (u, b) = rest.split_at_mut(gh * self.hidden);
        (w, u, b)
    }

    /// One step; returns the new state.
    pub fn forward(&self, p: &[f64], x: &[f64], state: &[f64]) -> (Vec<f64>, StepCache) {
        let h = self.hidden;
        let (w, u, b) = self.split(p);
        let mut pre = b.to_vec();
        matvec_add(w, x, &mut pre);
        match self.kind {
            CellKind::Gru => {
                let hp = state;
                // z and r see U h directly
                matvec_add(&u[..2 * h * h], hp, &mut pre[..2 * h]);
                let mut gates = vec![0.0; 3 * h];
                for j in 0..2 * h {
                    gates[j] = sigmoid(pre[j]);
                }
                let rh: Vec<f64> = (0..h).map(|j| gates[h + j] * hp[j]).collect();
                matvec_add(&u[2 * h * h..], &rh, &mut pre[2 * h..]);
                for j in 0..h {
                    gates[2 * h + j] = pre[2 * h + j].tanh();
                }
                let next = (0..h)
                    .map(|j| {
                        let z = gates[j];
                        (1.0 - z) * gates[2 * h + j] + z * hp[j]
                    })
                    .collect();
                let cache = StepCache {
                    x: x.to_vec(),
                    state: state.to_vec(),
                    gates,
                    aux: rh,
                };
                (next, cache)
            }
            CellKind::Lstm => {
                let (hp, cp) = state.split_at(h);
                matvec_add(u, hp, &mut pre);
                let mut gates = vec![0.0; 4 * h];
                for j in 0..4 * h {
                    gates[j] = if (2 * h..3 * h).contains(&j) {
                        pre[j].tanh()
                    } else {
                        sigmoid(pre[j])
                    };
                }
                let mut next = vec![0.0; 2 * h];
                let mut tc = vec![0.0; h];
                for j in 0..h {
                    let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                    let c = f * cp[j] + i * g;
                    tc[j] = c.tanh();
                    next[j] = o * tc[j];
                    next[h + j] = c;
                }
                let cache = StepCache {
                    x: x.to_vec(),
                    state: state.to_vec(),
                    gates,
                    aux: tc,
                };
                (next, cache)
            }
        }
    }

    /// Backward through one step. `d_next` is the gradient w.r.t. the new
    /// state; accumulates into `grad` (parameter gradient) and `dx`, and
    /// returns the gradient w.r.t. the previous state.
    pub fn backward(&self, p: &[f64], cache: &StepCache, d_next: &[f64], grad: &mut [f64], dx: &mut [f64]) -> Vec<f64> {
        let h = self.hidden;
        let (w, u, _) = self.split(p);
        let g = &cache.gates;
        let mut da = vec![0.0; self.kind.gates() * h];
        let mut d_state = vec![0.0; self.state_len()];
        match self.kind {
            CellKind::Gru => {
                let hp = &cache.state;
                for j in 0..h {
                    let (z, n) = (g[j], g[2 * h + j]);
                    let dh = d_next[j];
                    let dn = dh * (1.0 - z);
                    da[2 * h + j] = dn * (1.0 - n * n);
                    da[j] = dh * (hp[j] - n) * z * (1.0 - z);
                    d_state[j] += dh * z;
                }
                // through U_n (r ⊙ h)
                let mut drh = vec![0.0; h];
                matvec_t_add(&u[2 * h * h..], &da[2 * h..], &mut drh);
                for j in 0..h {
                    let r = g[h + j];
                    da[h + j] = drh[j] * hp[j] * r * (1.0 - r);
                    d_state[j] += drh[j] * r;
                }
                matvec_t_add(&u[..2 * h * h], &da[..2 * h], &mut d_state);
                let (gw, gu, gb) = self.split_mut(grad);
                outer_add(gw, &da, &cache.x);
                outer_add(&mut gu[..2 * h * h], &da[..2 * h], hp);
                outer_add(&mut gu[2 * h * h..], &da[2 * h..], &cache.aux);
                for (a, b) in gb.iter_mut().zip(&da) {
                    *a += b;
                }
            }
            CellKind::Lstm => {
                let (hp, cp) = cache.state.split_at(h);
                let tc = &cache.aux;
                for j in 0..h {
                    let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let dh = d_next[j];
                    let dc = d_next[h + j] + dh * o * (1.0 - tc[j] * tc[j]);
                    da[j] = dc * gg * i * (1.0 - i);
                    da[h + j] = dc * cp[j] * f * (1.0 - f);
                    da[2 * h + j] = dc * i * (1.0 - gg * gg);
                    da[3 * h + j] = dh * tc[j] * o * (1.0 - o);
                    d_state[h + j] = dc * f;
                }
                let mut dh_prev = vec![0.0; h];
                matvec_t_add(u, &da, &mut dh_prev);
                d_state[..h].copy_from_slice(&dh_prev);
                let (gw, gu, gb) = self.split_mut(grad);
                outer_add(gw, &da, &cache.x);
                outer_add(gu, &da, hp);
                for (a, b) in gb.iter_mut().zip(&da) {
                    *a += b;
                }
            }
        }
        matvec_t_add(w, &da, dx);
        d_state
    }
}
