//! Monte-Carlo dropout sampling and per-step selection of the dropout
//! probability with the smallest predictive spread.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AAModel, HiddenBank};
use crate::nn::dropout_mask;
use crate::rng::{self, StreamRng};
use crate::window::FeatureWindow;

/// Anything that produces one forecast per dropout mask.
pub trait StochasticForecaster: Sync {
    fn sample(&self, p: f64, rng: &mut StreamRng) -> Result<f64>;
}

/// A trained model bound to one window. The recurrent and attention layers
/// are evaluated once; each sample only redraws the dropout mask.
#[derive(Debug, Clone)]
pub struct WindowForecaster<'m> {
    model: &'m AAModel,
    layer: Vec<f64>,
}

impl<'m> WindowForecaster<'m> {
    pub fn new(model: &'m AAModel, window: &FeatureWindow, bank: &HiddenBank) -> Result<Self> {
        Ok(Self {
            model,
            layer: model.layer_output(window, bank)?,
        })
    }
}

impl StochasticForecaster for WindowForecaster<'_> {
    fn sample(&self, p: f64, rng: &mut StreamRng) -> Result<f64> {
        let mask = dropout_mask(p, self.layer.len(), rng)?;
        self.model.head(&self.layer, &mask)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub grid: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            grid: default_grid(),
            samples: 100,
            seed: 0,
        }
    }
}

/// `0.1, 0.2, ..., 0.9`.
pub fn default_grid() -> Vec<f64> {
    (1..=9).map(|k| k as f64 / 10.0).collect()
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must lie in [0, 1), got {p}"
        )));
    }
    Ok(())
}

/// `m` forecasts under independent masks. Sample `k` at `step` draws from
/// its own stream keyed by `(step, p, k)`.
pub fn mc_sample<F: StochasticForecaster + ?Sized>(
    f: &F,
    p: f64,
    m: usize,
    master: u64,
    step: u64,
) -> Result<Vec<f64>> {
    check_p(p)?;
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 samples, got {m}"
        )));
    }
    (0..m as u64)
        .map(|k| f.sample(p, &mut rng::stream(master, &[step, p.to_bits(), k])))
        .collect()
}

/// Mean and population standard deviation.
pub fn predictive_stats(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (k, &x) in samples.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    Ok((mean, (m2 / samples.len() as f64).max(0.0).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDistribution {
    pub step: u64,
    pub samples: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub p_star: f64,
    /// `(p, sd)` for every evaluated grid point.
    pub grid_sd: Vec<(f64, f64)>,
}

impl ForecastDistribution {
    /// Empirical quantile with linear interpolation between order statistics.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        let pos = q.clamp(0.0, 1.0) * (s.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        s[lo] + (pos - lo as f64) * (s[hi] - s[lo])
    }
}

/// Samples at every grid probability and keeps the one with the smallest
/// standard deviation; ties go to the smaller probability.
pub fn dynamic_optimize<F: StochasticForecaster + ?Sized>(
    f: &F,
    grid: &[f64],
    m: usize,
    master: u64,
    step: u64,
) -> Result<ForecastDistribution> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty dropout grid".into()));
    }
    let runs = grid
        .par_iter()
        .map(|&p| {
            let samples = mc_sample(f, p, m, master, step)?;
            let (mean, sd) = predictive_stats(&samples)?;
            Ok((p, samples, mean, sd))
        })
        .collect::<Result<Vec<_>>>()?;
    let grid_sd: Vec<(f64, f64)> = runs.iter().map(|r| (r.0, r.3)).collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| {
            if b.3 < a.3 || (b.3 == a.3 && b.0 < a.0) {
                b
            } else {
                a
            }
        })
        .expect("grid is non-empty");
    Ok(ForecastDistribution {
        step,
        samples: best.1,
        mean: best.2,
        sd: best.3,
        p_star: best.0,
        grid_sd,
    })
}
