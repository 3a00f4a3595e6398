//! GRU and LSTM cells with hand-written backward passes.
//!
//! Gate blocks are stacked row-wise: GRU `[reset; update; candidate]`,
//! LSTM `[input; forget; cell; output]`. The GRU candidate applies the reset
//! gate to the projected hidden state, `n = tanh(W_xn x + b_n + r * (W_hn h))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ops::sigmoid;
use super::{GradBuffer, ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gru" => Ok(CellKind::Gru),
            "lstm" => Ok(CellKind::Lstm),
            other => Err(Error::Config(format!("unknown cell kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CellKind::Gru => "GRU",
            CellKind::Lstm => "LSTM",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellParams {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    /// `gates*hidden x input`
    pub w_x: ParamId,
    /// `gates*hidden x hidden`
    pub w_h: ParamId,
    /// `gates*hidden x 1`
    pub b: ParamId,
}

/// Recurrent state; `c` is empty for a GRU.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: match kind {
                CellKind::Gru => Vec::new(),
                CellKind::Lstm => vec![0.0; hidden],
            },
        }
    }
}

/// Intermediates kept by the forward pass.
#[derive(Debug, Clone)]
pub struct CellCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, stacked like the weights.
    gates: Vec<f64>,
    /// GRU: `W_hn h_prev`; LSTM: `tanh(c)`.
    aux: Vec<f64>,
}

/// Gradients flowing out of a cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellInputGrads {
    pub dx: Vec<f64>,
    pub dh_prev: Vec<f64>,
    pub dc_prev: Vec<f64>,
}

impl CellParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        kind: CellKind,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("cell sizes must be positive".into()));
        }
        let g = kind.gates() * hidden;
        Ok(Self {
            kind,
            input,
            hidden,
            w_x: store.add_uniform(format!("{prefix}.w_x"), g, input, input, rng)?,
            w_h: store.add_uniform(format!("{prefix}.w_h"), g, hidden, hidden, rng)?,
            b: store.add_uniform(format!("{prefix}.b"), g, 1, hidden, rng)?,
        })
    }

    fn check(&self, x: &[f64], prev: &CellState) -> Result<()> {
        let c_len = match self.kind {
            CellKind::Gru => 0,
            CellKind::Lstm => self.hidden,
        };
        if x.len() != self.input || prev.h.len() != self.hidden || prev.c.len() != c_len {
            return Err(Error::ShapeMismatch(format!(
                "{} cell ({} in, {} hidden) got x={}, h={}, c={}",
                self.kind,
                self.input,
                self.hidden,
                x.len(),
                prev.h.len(),
                prev.c.len()
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        x: &[f64],
        prev: &CellState,
    ) -> Result<(CellState, CellCache)> {
        self.check(x, prev)?;
        let hd = self.hidden;
        let wx = store.value(self.w_x);
        let wh = store.value(self.w_h);
        let b = store.value(self.b).data();
        let mut ax = wx.matvec(x);
        let ah = wh.matvec(&prev.h);

        match self.kind {
            CellKind::Gru => {
                let mut gates = vec![0.0; 3 * hd];
                let mut h = vec![0.0; hd];
                for k in 0..hd {
                    let r = sigmoid(ax[k] + ah[k] + b[k]);
                    let z = sigmoid(ax[hd + k] + ah[hd + k] + b[hd + k]);
                    let n = (ax[2 * hd + k] + b[2 * hd + k] + r * ah[2 * hd + k]).tanh();
                    gates[k] = r;
                    gates[hd + k] = z;
                    gates[2 * hd + k] = n;
                    h[k] = (1.0 - z) * n + z * prev.h[k];
                }
                let aux = ah[2 * hd..].to_vec();
                Ok((
                    CellState { h, c: Vec::new() },
                    CellCache {
                        x: x.to_vec(),
                        h_prev: prev.h.clone(),
                        c_prev: Vec::new(),
                        gates,
                        aux,
                    },
                ))
            }
            CellKind::Lstm => {
                for ((a, h), bb) in ax.iter_mut().zip(&ah).zip(b) {
                    *a += h + bb;
                }
                let mut gates = ax;
                let mut c = vec![0.0; hd];
                let mut h = vec![0.0; hd];
                let mut tc = vec![0.0; hd];
                for k in 0..hd {
                    let i = sigmoid(gates[k]);
                    let f = sigmoid(gates[hd + k]);
                    let g = gates[2 * hd + k].tanh();
                    let o = sigmoid(gates[3 * hd + k]);
                    gates[k] = i;
                    gates[hd + k] = f;
                    gates[2 * hd + k] = g;
                    gates[3 * hd + k] = o;
                    c[k] = f * prev.c[k] + i * g;
                    tc[k] = c[k].tanh();
                    h[k] = o * tc[k];
                }
                Ok((
                    CellState { h, c },
                    CellCache {
                        x: x.to_vec(),
                        h_prev: prev.h.clone(),
                        c_prev: prev.c.clone(),
                        gates,
                        aux: tc,
                    },
                ))
            }
        }
    }

    /// Consumes the cache of one step. `dc` is ignored for a GRU.
    pub fn backward(
        &self,
        store: &ParamStore,
        cache: CellCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut GradBuffer,
    ) -> CellInputGrads {
        let hd = self.hidden;
        let g = &cache.gates;
        let mut dpre_x = vec![0.0; self.kind.gates() * hd];
        let mut dpre_h;
        let mut dh_prev = vec![0.0; hd];
        let mut dc_prev = Vec::new();

        match self.kind {
            CellKind::Gru => {
                for k in 0..hd {
                    let (r, z, n) = (g[k], g[hd + k], g[2 * hd + k]);
                    let dn = dh[k] * (1.0 - z);
                    let dz = dh[k] * (cache.h_prev[k] - n);
                    dh_prev[k] = dh[k] * z;
                    let dn_pre = dn * (1.0 - n * n);
                    let dr = dn_pre * cache.aux[k];
                    dpre_x[k] = dr * r * (1.0 - r);
                    dpre_x[hd + k] = dz * z * (1.0 - z);
                    dpre_x[2 * hd + k] = dn_pre;
                }
                dpre_h = dpre_x.clone();
                for k in 0..hd {
                    dpre_h[2 * hd + k] *= g[k];
                }
            }
            CellKind::Lstm => {
                dc_prev = vec![0.0; hd];
                for k in 0..hd {
                    let (i, f, gg, o) = (g[k], g[hd + k], g[2 * hd + k], g[3 * hd + k]);
                    let tc = cache.aux[k];
                    let dct = dc[k] + dh[k] * o * (1.0 - tc * tc);
                    dpre_x[k] = dct * gg * i * (1.0 - i);
                    dpre_x[hd + k] = dct * cache.c_prev[k] * f * (1.0 - f);
                    dpre_x[2 * hd + k] = dct * i * (1.0 - gg * gg);
                    dpre_x[3 * hd + k] = dh[k] * tc * o * (1.0 - o);
                    dc_prev[k] = dct * f;
                }
                dpre_h = dpre_x.clone();
            }
        }

        grads.get_mut(self.w_x).add_outer(&dpre_x, &cache.x);
        grads.get_mut(self.w_h).add_outer(&dpre_h, &cache.h_prev);
        for (gb, d) in grads.get_mut(self.b).data_mut().iter_mut().zip(&dpre_x) {
            *gb += d;
        }
        let mut dx = vec![0.0; self.input];
        store.value(self.w_x).t_matvec_acc(&dpre_x, &mut dx);
        store.value(self.w_h).t_matvec_acc(&dpre_h, &mut dh_prev);
        CellInputGrads {
            dx,
            dh_prev,
            dc_prev,
        }
    }
}
