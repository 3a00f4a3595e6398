//! The anomaly-aware forecaster: a recurrent encoder whose per-step outputs
//! switch to attention over critical-step hidden states, followed by
//! dropout and a dense head over the whole window.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    softmax, softmax_backward, CellCache, CellKind, CellParams, CellState, Dense, GradBuffer,
    ParamStore,
};
use crate::rng;
use crate::window::{ChannelLayout, FeatureSeries, FeatureWindow};

use super::attention::AttentionParams;
use super::critical::HiddenBank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cell: CellKind,
    pub hidden: usize,
    pub tau: usize,
    pub layout: ChannelLayout,
    /// When false every step passes its hidden state straight to the head.
    pub attention: bool,
    /// Dropout probability used while training.
    pub static_dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell: CellKind::Gru,
            hidden: 16,
            tau: 12,
            layout: ChannelLayout::Star,
            attention: true,
            static_dropout: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.tau == 0 {
            return Err(Error::Config("hidden size and tau must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.static_dropout) {
            return Err(Error::Config(format!(
                "static dropout must lie in [0, 1), got {}",
                self.static_dropout
            )));
        }
        Ok(())
    }

    /// Width of the dense head input.
    pub fn head_width(&self) -> usize {
        self.tau * self.hidden
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AAModel {
    config: ModelConfig,
    store: ParamStore,
    cell: CellParams,
    attention: Dense,
    head: Dense,
}

/// Attention bookkeeping for one critical step.
#[derive(Debug, Clone)]
struct AttnStep {
    /// In-window positions attended to after the bank prefix.
    live: Vec<usize>,
    scores: Vec<f64>,
    alpha: Vec<f64>,
}

/// Everything the backward pass needs from one forward call.
#[derive(Debug)]
pub struct ForwardCache<'b> {
    cells: Vec<CellCache>,
    hidden: Vec<Vec<f64>>,
    layer: Vec<f64>,
    attn: Vec<Option<AttnStep>>,
    mask: Vec<f64>,
    bank: &'b [Vec<f64>],
}

impl AAModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, &[0x1417]);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let cell = CellParams::register(
            &mut store,
            "cell",
            config.cell,
            config.layout.channels(),
            h,
            &mut rng,
        )?;
        let attention = Dense::register(&mut store, "attention", h, 1, &mut rng)?;
        let head = Dense::register(&mut store, "head", config.head_width(), 1, &mut rng)?;
        Ok(Self {
            config,
            store,
            cell,
            attention,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Same parameters with the attention path switched on or off.
    pub fn with_attention(&self, on: bool) -> Self {
        let mut m = self.clone();
        m.config.attention = on;
        m
    }

    pub fn attention_params(&self) -> AttentionParams {
        AttentionParams {
            w: self.store.value(self.attention.w).data().to_vec(),
            b: self.store.value(self.attention.b).data()[0],
        }
    }

    fn check_window(&self, w: &FeatureWindow) -> Result<()> {
        let (rows, cols) = w.features.shape();
        if rows != self.config.tau
            || cols != self.config.layout.channels()
            || w.critical.len() != rows
        {
            return Err(Error::ShapeMismatch(format!(
                "model expects {}x{} windows, got {rows}x{cols}",
                self.config.tau,
                self.config.layout.channels()
            )));
        }
        Ok(())
    }

    fn run_cell(
        &self,
        rows: impl Iterator<Item = usize>,
        features: &crate::nn::Tensor2,
    ) -> Result<Vec<f64>> {
        let mut state = CellState::zeros(self.config.cell, self.config.hidden);
        for r in rows {
            state = self.cell.forward(&self.store, features.row(r), &state)?.0;
        }
        Ok(state.h)
    }

    /// Hidden states at the critical steps of `fs`. Each entry is the state
    /// at the last step of the first window containing that index, so the
    /// bank seen by the window ending at `t` is exactly the entries before
    /// the window start.
    pub fn build_bank(&self, fs: &FeatureSeries) -> Result<HiddenBank> {
        let tau = self.config.tau;
        if fs.len() < tau + 1 {
            return Err(Error::WindowTooLong {
                tau,
                len: fs.len(),
                need: tau + 1,
            });
        }
        let mut bank = HiddenBank::new();
        if !self.config.attention {
            return Ok(bank);
        }
        for i in (0..fs.len() - 1).filter(|&i| fs.critical[i]) {
            let start = (i + 1).saturating_sub(tau);
            bank.push(i, self.run_cell(start..=i, &fs.features)?)?;
        }
        Ok(bank)
    }

    fn encode(&self, w: &FeatureWindow) -> Result<(Vec<Vec<f64>>, Vec<CellCache>)> {
        let mut state = CellState::zeros(self.config.cell, self.config.hidden);
        let mut hidden = Vec::with_capacity(self.config.tau);
        let mut cells = Vec::with_capacity(self.config.tau);
        for r in 0..self.config.tau {
            let (next, cache) = self.cell.forward(&self.store, w.features.row(r), &state)?;
            hidden.push(next.h.clone());
            cells.push(cache);
            state = next;
        }
        Ok((hidden, cells))
    }

    /// Per-step layer outputs concatenated into the head input.
    fn layer(
        &self,
        hidden: &[Vec<f64>],
        critical: &[bool],
        bank: &[Vec<f64>],
    ) -> (Vec<f64>, Vec<Option<AttnStep>>) {
        let h = self.config.hidden;
        let mut out = Vec::with_capacity(self.config.head_width());
        let mut attn = Vec::with_capacity(hidden.len());
        let ap = self.attention_params();
        let bank_scores: Vec<f64> = if self.config.attention && critical.iter().any(|&c| c) {
            bank.iter().map(|s| ap.score(s)).collect()
        } else {
            Vec::new()
        };
        let mut live = Vec::new();
        let mut live_scores = Vec::new();
        for (j, hj) in hidden.iter().enumerate() {
            if !(self.config.attention && critical[j]) {
                out.extend_from_slice(hj);
                attn.push(None);
                continue;
            }
            live.push(j);
            live_scores.push(ap.score(hj));
            let scores: Vec<f64> = bank_scores.iter().chain(&live_scores).copied().collect();
            let alpha = softmax(&scores);
            let mut a = vec![0.0; h];
            let states = bank.iter().chain(live.iter().map(|&i| &hidden[i]));
            for (s, &wgt) in states.zip(&alpha) {
                for (o, v) in a.iter_mut().zip(s) {
                    *o += wgt * v;
                }
            }
            out.extend_from_slice(&a);
            attn.push(Some(AttnStep {
                live: live.clone(),
                scores,
                alpha,
            }));
        }
        (out, attn)
    }

    /// Head input for a window with no dropout applied. Dropout only acts
    /// after this point, so one call serves any number of dropout samples.
    pub fn layer_output(&self, w: &FeatureWindow, bank: &HiddenBank) -> Result<Vec<f64>> {
        self.check_window(w)?;
        let (hidden, _) = self.encode(w)?;
        let (out, _) = self.layer(&hidden, &w.critical, bank.before(w.start()));
        Ok(out)
    }

    /// Dense head over a masked layer output.
    pub fn head(&self, layer: &[f64], mask: &[f64]) -> Result<f64> {
        let width = self.config.head_width();
        if layer.len() != width || mask.len() != width {
            return Err(Error::ShapeMismatch(format!(
                "head expects {width} inputs and mask entries, got {} and {}",
                layer.len(),
                mask.len()
            )));
        }
        let w = self.store.value(self.head.w).data();
        let b = self.store.value(self.head.b).data()[0];
        let y = b + layer
            .iter()
            .zip(mask)
            .zip(w)
            .map(|((a, m), w)| a * m * w)
            .sum::<f64>();
        if !y.is_finite() {
            return Err(Error::NonFinite("model output".into()));
        }
        Ok(y)
    }

    /// Point forecast for the step after the window.
    pub fn predict(&self, w: &FeatureWindow, bank: &HiddenBank, mask: &[f64]) -> Result<f64> {
        let layer = self.layer_output(w, bank)?;
        self.head(&layer, mask)
    }

    pub fn forward<'b>(
        &self,
        w: &FeatureWindow,
        bank: &'b HiddenBank,
        mask: &[f64],
    ) -> Result<(f64, ForwardCache<'b>)> {
        self.check_window(w)?;
        let (hidden, cells) = self.encode(w)?;
        let prefix = bank.before(w.start());
        let (layer, attn) = self.layer(&hidden, &w.critical, prefix);
        let y = self.head(&layer, mask)?;
        Ok((
            y,
            ForwardCache {
                cells,
                hidden,
                layer,
                attn,
                mask: mask.to_vec(),
                bank: prefix,
            },
        ))
    }

    /// Accumulates `dy * d(output)/d(params)` into `grads`. Bank entries are
    /// treated as constants.
    pub fn backward(&self, cache: ForwardCache<'_>, dy: f64, grads: &mut GradBuffer) {
        let h = self.config.hidden;
        let masked: Vec<f64> = cache
            .layer
            .iter()
            .zip(&cache.mask)
            .map(|(a, m)| a * m)
            .collect();
        let d_masked = self.head.backward(&self.store, &masked, &[dy], grads);
        let d_layer: Vec<f64> = d_masked
            .iter()
            .zip(&cache.mask)
            .map(|(d, m)| d * m)
            .collect();

        let ap = self.attention_params();
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; h]; cache.hidden.len()];
        let mut d_att_w = vec![0.0; h];
        let mut d_att_b = 0.0;
        for (j, step) in cache.attn.iter().enumerate() {
            let d_a = &d_layer[j * h..(j + 1) * h];
            let Some(step) = step else {
                for (g, d) in dh[j].iter_mut().zip(d_a) {
                    *g += d;
                }
                continue;
            };
            let nb = cache.bank.len();
            let state = |k: usize| -> &[f64] {
                if k < nb {
                    &cache.bank[k]
                } else {
                    &cache.hidden[step.live[k - nb]]
                }
            };
            let d_alpha: Vec<f64> = (0..step.alpha.len())
                .map(|k| state(k).iter().zip(d_a).map(|(s, d)| s * d).sum())
                .collect();
            let d_scores = softmax_backward(&step.alpha, &d_alpha);
            for k in 0..step.alpha.len() {
                let d_pre = d_scores[k] * (1.0 - step.scores[k] * step.scores[k]);
                for (g, s) in d_att_w.iter_mut().zip(state(k)) {
                    *g += d_pre * s;
                }
                d_att_b += d_pre;
                if k >= nb {
                    let pos = step.live[k - nb];
                    let alpha = step.alpha[k];
                    for ((g, d), w) in dh[pos].iter_mut().zip(d_a).zip(&ap.w) {
                        *g += alpha * d + d_pre * w;
                    }
                }
            }
        }
        for (g, d) in grads
            .get_mut(self.attention.w)
            .data_mut()
            .iter_mut()
            .zip(&d_att_w)
        {
            *g += d;
        }
        grads.get_mut(self.attention.b).data_mut()[0] += d_att_b;

        let mut dh_next = vec![0.0; h];
        let mut dc_next = match self.config.cell {
            CellKind::Gru => Vec::new(),
            CellKind::Lstm => vec![0.0; h],
        };
        for (j, cell_cache) in cache.cells.into_iter().enumerate().rev() {
            let total: Vec<f64> = dh[j].iter().zip(&dh_next).map(|(a, b)| a + b).collect();
            let g = self
                .cell
                .backward(&self.store, cell_cache, &total, &dc_next, grads);
            dh_next = g.dh_prev;
            dc_next = g.dc_prev;
        }
    }
}
