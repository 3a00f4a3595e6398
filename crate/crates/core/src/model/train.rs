//! Mini-batch training with static dropout and best-validation selection.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{dropout_mask, GradBuffer, Optimizer, OptimizerKind, Tensor2};
use crate::rng;
use crate::window::{make_windows, FeatureSeries, FeatureWindow};

use super::aa::AAModel;
use super::critical::HiddenBank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm cap.
    pub clip: f64,
    /// Trailing share of each series' windows held out for validation.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 64,
            lr: 1e-3,
            weight_decay: 0.0,
            epochs: 40,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            clip: 5.0,
            val_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite())
            || !(self.weight_decay >= 0.0 && self.weight_decay.is_finite())
        {
            return Err(Error::Config(
                "learning rate and weight decay must be finite and non-negative".into(),
            ));
        }
        if !(self.clip > 0.0) {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(
                "validation fraction must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Per-dataset hyperparameter sets: batch, learning rate, weight decay,
/// epochs and static dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    Hurricane,
    Covid19,
    Electricity,
}

impl Preset {
    /// Training settings and static dropout probability.
    pub fn settings(self) -> (TrainConfig, f64) {
        let (batch, lr, weight_decay, dropout) = match self {
            Preset::Hurricane => (128, 1e-5, 1e-6, 0.5),
            Preset::Covid19 => (64, 3e-5, 1e-5, 0.4),
            Preset::Electricity => (64, 5e-5, 1e-4, 0.6),
        };
        let cfg = TrainConfig {
            batch,
            lr,
            weight_decay,
            epochs: 40,
            ..TrainConfig::default()
        };
        (cfg, dropout)
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "hurricane" => Ok(Preset::Hurricane),
            "covid19" | "covid" => Ok(Preset::Covid19),
            "electricity" => Ok(Preset::Electricity),
            other => Err(Error::Config(format!("unknown preset `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest validation loss seen (including the
    /// initial ones).
    pub model: AAModel,
    pub trace: Vec<EpochRecord>,
    /// 0 when no epoch improved on the initial parameters.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

struct Item {
    series: usize,
    window: FeatureWindow,
}

fn banks(model: &AAModel, series: &[FeatureSeries]) -> Result<Vec<HiddenBank>> {
    series
        .par_iter()
        .map(|fs| {
            if fs.len() > model.config().tau {
                model.build_bank(fs)
            } else {
                Ok(HiddenBank::new())
            }
        })
        .collect()
}

/// Rebuilds the banks of the series that occur in `chunk`.
fn refresh_banks(
    model: &AAModel,
    series: &[FeatureSeries],
    items: &[Item],
    chunk: &[usize],
    banks: &mut [HiddenBank],
) -> Result<()> {
    let mut used: Vec<usize> = chunk.iter().map(|&k| items[k].series).collect();
    used.sort_unstable();
    used.dedup();
    let fresh = used
        .par_iter()
        .map(|&si| model.build_bank(&series[si]))
        .collect::<Result<Vec<_>>>()?;
    for (si, bank) in used.into_iter().zip(fresh) {
        banks[si] = bank;
    }
    Ok(())
}

fn mean_sq_error(model: &AAModel, items: &[Item], banks: &[HiddenBank]) -> Result<f64> {
    let ones = vec![1.0; model.config().head_width()];
    let errs = items
        .par_iter()
        .map(|it| {
            let y = model.predict(&it.window, &banks[it.series], &ones)?;
            Ok((y - it.window.label).powi(2))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

fn diverged(epoch: usize, batch: usize, loss: f64) -> Error {
    Error::Divergence { epoch, batch, loss }
}

/// Trains on every labelled window of `series`, shuffled across series each
/// epoch. Before every batch the hidden banks of the series it touches are
/// rebuilt from the current parameters; within the batch they are constants.
pub fn train(model: AAModel, series: &[FeatureSeries], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let tau = model.config().tau;
    let width = model.config().head_width();
    let p = model.config().static_dropout;

    let mut train_items = Vec::new();
    let mut val_items = Vec::new();
    for (si, fs) in series.iter().enumerate() {
        if fs.layout != model.config().layout {
            return Err(Error::ShapeMismatch(format!(
                "series `{}` has {:?} channels, model expects {:?}",
                fs.id,
                fs.layout,
                model.config().layout
            )));
        }
        if fs.len() <= tau {
            continue;
        }
        let windows = make_windows(fs, tau)?;
        let n_val = if windows.len() >= 5 {
            ((windows.len() as f64 * cfg.val_fraction).floor() as usize)
                .max(usize::from(cfg.val_fraction > 0.0))
        } else {
            0
        };
        let cut = windows.len() - n_val;
        for (k, window) in windows.into_iter().enumerate() {
            let item = Item { series: si, window };
            if k < cut {
                train_items.push(item);
            } else {
                val_items.push(item);
            }
        }
    }
    if train_items.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no training windows of length {tau} in {} series",
            series.len()
        )));
    }
    let val_on_train = val_items.is_empty();

    let mut model = model;
    let mut optimizer = Optimizer::new(cfg.optimizer, model.store());
    let mut current = banks(&model, series)?;
    let eval = |model: &AAModel, banks: &[HiddenBank]| {
        let items = if val_on_train {
            &train_items
        } else {
            &val_items
        };
        mean_sq_error(model, items, banks)
    };
    let mut best_val = eval(&model, &current)?;
    if !best_val.is_finite() {
        return Err(diverged(0, 0, best_val));
    }
    let mut best_values: Vec<Tensor2> = model.store().values().to_vec();
    let mut best_epoch = 0;
    let mut trace = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..train_items.len()).collect();
    // end-of-epoch failures are reported against one past the last batch
    let n_batches = order.len().div_ceil(cfg.batch);
    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(cfg.seed, &[0x5eed_0001, epoch as u64]));
        // indexed by window so the epoch mean does not depend on batch order
        let mut losses = vec![0.0; train_items.len()];
        for (bi, chunk) in order.chunks(cfg.batch).enumerate() {
            if bi > 0 && model.config().attention {
                refresh_banks(&model, series, &train_items, chunk, &mut current)
                    .map_err(|_| diverged(epoch, bi, f64::NAN))?;
            }
            let scale = 2.0 / chunk.len() as f64;
            let results = chunk
                .par_iter()
                .map(|&k| {
                    let it = &train_items[k];
                    let mut r = rng::stream(cfg.seed, &[0x5eed_0002, epoch as u64, k as u64]);
                    let mask = dropout_mask(p, width, &mut r)?;
                    let (y, cache) = model
                        .forward(&it.window, &current[it.series], &mask)
                        .map_err(|_| diverged(epoch, bi, f64::NAN))?;
                    let err = y - it.window.label;
                    let mut g = model.store().grad_buffer();
                    model.backward(cache, scale * err, &mut g);
                    Ok((err * err, g))
                })
                .collect::<Result<Vec<(f64, GradBuffer)>>>()?;
            let batch_loss = results.iter().map(|(l, _)| l).sum::<f64>();
            if !batch_loss.is_finite() {
                return Err(diverged(epoch, bi, batch_loss / chunk.len() as f64));
            }
            for (&k, (l, _)) in chunk.iter().zip(&results) {
                losses[k] = *l;
            }
            let store = model.store_mut();
            store.zero_grads();
            for (_, g) in &results {
                store.accumulate(g, 1.0);
            }
            store.clip_grad_norm(cfg.clip);
            optimizer
                .step(store, cfg.lr, cfg.weight_decay)
                .map_err(|_| diverged(epoch, bi, batch_loss / chunk.len() as f64))?;
        }
        current = banks(&model, series).map_err(|_| diverged(epoch, n_batches, f64::NAN))?;
        let val = eval(&model, &current).map_err(|_| diverged(epoch, n_batches, f64::NAN))?;
        if !val.is_finite() {
            return Err(diverged(epoch, n_batches, val));
        }
        trace.push(EpochRecord {
            epoch,
            train_loss: losses.iter().sum::<f64>() / losses.len() as f64,
            val_loss: val,
        });
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best_values = model.store().values().to_vec();
        }
    }
    model.store_mut().load_values(best_values)?;
    Ok(TrainOutcome {
        model,
        trace,
        best_epoch,
        best_val_loss: best_val,
    })
}
