//! Feature matrices and sliding windows fed to the forecaster.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::decompose::DecomposedSeries;
use crate::error::{Error, Result};
use crate::nn::Tensor2;
use crate::series::Normalizer;

/// Channel set of a feature series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChannelLayout {
    /// `(x, e, s, t, a, r)`.
    Star,
    /// `(x, e)` only, without decomposition.
    Raw,
}

impl ChannelLayout {
    pub fn channels(self) -> usize {
        match self {
            ChannelLayout::Star => 6,
            ChannelLayout::Raw => 2,
        }
    }
}

/// A whole series laid out as a `T x C` feature matrix.
///
/// `x` and the trend are z-scored with the series normalizer (the trend after
/// removing the positivity offset); events, seasonal, anomaly and residual
/// channels are kept as they are.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub id: Arc<str>,
    pub layout: ChannelLayout,
    pub features: Tensor2,
    /// Normalized values, the forecasting target.
    pub target: Vec<f64>,
    /// `e != 0 || a != 1` per index (`e != 0` for the raw layout).
    pub critical: Vec<bool>,
    pub normalizer: Normalizer,
}

impl FeatureSeries {
    pub fn star(
        id: &str,
        x: &[f64],
        e: &[f64],
        parts: &DecomposedSeries,
        normalizer: Normalizer,
    ) -> Result<Self> {
        let n = x.len();
        if e.len() != n || parts.trend.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "series `{id}`: {n} values, {} events, {} decomposed points",
                e.len(),
                parts.trend.len()
            )));
        }
        let mut data = Vec::with_capacity(6 * n);
        let mut target = Vec::with_capacity(n);
        let mut critical = Vec::with_capacity(n);
        for i in 0..n {
            let xn = normalizer.normalize(x[i]);
            target.push(xn);
            data.extend_from_slice(&[
                xn,
                e[i],
                parts.seasonal[i],
                normalizer.normalize(parts.trend[i] - parts.offset),
                parts.anomaly[i],
                parts.residual[i],
            ]);
            critical.push(e[i] != 0.0 || parts.anomaly[i] != 1.0);
        }
        Ok(Self {
            id: id.into(),
            layout: ChannelLayout::Star,
            features: Tensor2::from_vec(n, 6, data)?,
            target,
            critical,
            normalizer,
        })
    }

    pub fn raw(id: &str, x: &[f64], e: &[f64], normalizer: Normalizer) -> Result<Self> {
        let n = x.len();
        if e.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "series `{id}`: {n} values, {} events",
                e.len()
            )));
        }
        let target: Vec<f64> = x.iter().map(|&v| normalizer.normalize(v)).collect();
        let data = target
            .iter()
            .zip(e)
            .flat_map(|(&xn, &ev)| [xn, ev])
            .collect();
        Ok(Self {
            id: id.into(),
            layout: ChannelLayout::Raw,
            features: Tensor2::from_vec(n, 2, data)?,
            target,
            critical: e.iter().map(|&ev| ev != 0.0).collect(),
            normalizer,
        })
    }

    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.layout.channels()
    }

    /// Sorted indices of critical steps.
    pub fn critical_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.critical[i]).collect()
    }
}

/// `tau` consecutive feature rows ending at `end`, labelled with the
/// normalized value at `end + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub series: Arc<str>,
    pub end: usize,
    pub features: Tensor2,
    pub critical: Vec<bool>,
    pub label: f64,
}

impl FeatureWindow {
    pub fn tau(&self) -> usize {
        self.features.rows()
    }

    /// Series index of the first row.
    pub fn start(&self) -> usize {
        self.end + 1 - self.tau()
    }
}

fn check_tau(fs: &FeatureSeries, tau: usize) -> Result<()> {
    if tau == 0 || tau >= fs.len() {
        return Err(Error::WindowTooLong {
            tau,
            len: fs.len(),
            need: tau + 1,
        });
    }
    Ok(())
}

/// The window ending at `end`; needs `tau - 1 <= end <= T - 2`.
pub fn window_at(fs: &FeatureSeries, tau: usize, end: usize) -> Result<FeatureWindow> {
    check_tau(fs, tau)?;
    if end + 1 < tau || end + 1 >= fs.len() {
        return Err(Error::InvalidArgument(format!(
            "series `{}`: no labelled window of length {tau} ends at {end}",
            fs.id
        )));
    }
    let start = end + 1 - tau;
    Ok(FeatureWindow {
        series: fs.id.clone(),
        end,
        features: fs.features.slice_rows(start, tau),
        critical: fs.critical[start..=end].to_vec(),
        label: fs.target[end + 1],
    })
}

/// All `T - tau` stride-1 windows in time order.
pub fn make_windows(fs: &FeatureSeries, tau: usize) -> Result<Vec<FeatureWindow>> {
    check_tau(fs, tau)?;
    (tau - 1..fs.len() - 1)
        .map(|end| window_at(fs, tau, end))
        .collect()
}
