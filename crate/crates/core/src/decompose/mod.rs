//! Multiplicative seasonal / trend / anomaly / residual decomposition.
//!
//! `x + offset = s * t * a * r`, where the trend comes from LOESS, the
//! seasonal indices from per-phase means of the detrended series, and the
//! anomaly channel takes over the residual wherever its robustness score
//! is above the budgeted cut-off.

mod anomaly;
mod loess;
mod seasonal;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use anomaly::{anomaly_budget, extract_anomalies, robustness_scores, threshold};
pub use loess::{loess, loess_trend, loess_trend_robust, neighbourhood_size, TREND_FLOOR};
pub use seasonal::seasonal_indices;

/// Median; reorders `v`. Even lengths average the two middle values.
pub fn median(v: &mut [f64]) -> f64 {
    assert!(!v.is_empty(), "median of empty slice");
    let n = v.len();
    let mid = n / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionConfig {
    /// LOESS span as a fraction of the series length.
    pub span: f64,
    /// Bisquare reweighting passes for the trend; 0 disables them.
    pub robust_iterations: usize,
    /// Fraction of points allowed into the anomaly channel.
    pub anomaly_p: f64,
    /// Trend/seasonal refinement passes. Each pass after the first fits the
    /// trend to the series divided by the previous seasonal estimate, which
    /// stops the seasonal swing from leaking into the trend near the ends.
    pub passes: usize,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            span: 0.3,
            robust_iterations: 0,
            anomaly_p: 0.05,
            passes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposedSeries {
    pub seasonal: Vec<f64>,
    pub trend: Vec<f64>,
    pub anomaly: Vec<f64>,
    pub residual: Vec<f64>,
    pub scores: Vec<f64>,
    pub cutoff: f64,
    /// Shift added to the input before the multiplicative split.
    pub offset: f64,
    pub cycle: usize,
    pub span: f64,
}

impl DecomposedSeries {
    pub fn len(&self) -> usize {
        self.trend.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trend.is_empty()
    }

    /// `s * t * a * r - offset` at index `i`.
    pub fn reconstruct(&self, i: usize) -> f64 {
        self.seasonal[i] * self.trend[i] * self.anomaly[i] * self.residual[i] - self.offset
    }

    pub fn is_anomalous(&self, i: usize) -> bool {
        self.anomaly[i] != 1.0
    }
}

/// Shift that makes every value at least `1e-6 * median(|x|)` (or `1e-6`
/// when that median is zero).
pub fn positivity_offset(x: &[f64]) -> f64 {
    let mut abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let m = median(&mut abs);
    let eps = if m > 0.0 { 1e-6 * m } else { 1e-6 };
    let min = x.iter().copied().fold(f64::INFINITY, f64::min);
    (eps - min).max(0.0)
}

/// Mean absolute deviation below which residuals count as exactly flat.
const FLAT_RESIDUAL_MAD: f64 = 1e-12;

pub fn decompose(
    x: &[f64],
    e: &[f64],
    cycle: usize,
    cfg: &DecompositionConfig,
) -> Result<DecomposedSeries> {
    if x.len() != e.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values vs {} events",
            x.len(),
            e.len()
        )));
    }
    if cycle == 0 || x.len() < 2 * cycle {
        return Err(Error::SeriesTooShort {
            series: String::new(),
            len: x.len(),
            need: 2 * cycle.max(1),
        });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("input value {i}")));
    }

    let offset = positivity_offset(x);
    let shifted: Vec<f64> = x.iter().map(|v| v + offset).collect();
    if cfg.passes == 0 {
        return Err(Error::InvalidArgument(
            "decomposition needs at least one pass".into(),
        ));
    }
    let mut seasonal = vec![1.0; x.len()];
    let mut trend = Vec::new();
    for _ in 0..cfg.passes {
        let deseasonalized: Vec<f64> = shifted.iter().zip(&seasonal).map(|(v, s)| v / s).collect();
        trend = loess_trend_robust(&deseasonalized, cfg.span, cfg.robust_iterations)?;
        let detrended: Vec<f64> = shifted.iter().zip(&trend).map(|(v, t)| v / t).collect();
        seasonal = seasonal_indices(&detrended, cycle)?;
    }
    let residual: Vec<f64> = shifted
        .iter()
        .zip(seasonal.iter().zip(&trend))
        .map(|(v, (s, t))| v / (s * t))
        .collect();

    let n = residual.len();
    let med = median(&mut residual.clone());
    let mad = residual.iter().map(|r| (r - med).abs()).sum::<f64>() / n as f64;
    let (scores, cutoff, anomaly, residual) = if mad < FLAT_RESIDUAL_MAD {
        (vec![0.0; n], 0.0, vec![1.0; n], residual)
    } else {
        let scores = robustness_scores(&residual)?;
        let cutoff = threshold(&scores, cfg.anomaly_p)?;
        let (a, r) = extract_anomalies(&residual, &scores, cutoff)?;
        (scores, cutoff, a, r)
    };

    Ok(DecomposedSeries {
        seasonal,
        trend,
        anomaly,
        residual,
        scores,
        cutoff,
        offset,
        cycle,
        span: cfg.span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn medians() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&mut [5.0]), 5.0);
    }

    fn pure(n: usize, cycle: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = 50.0 + 0.2 * i as f64;
                let s = 1.0 + 0.2 * (2.0 * std::f64::consts::PI * i as f64 / cycle as f64).sin();
                t * s
            })
            .collect()
    }

    #[test]
    fn pure_series_has_negligible_anomalies() {
        let x = pure(120, 12);
        let d = decompose(&x, &vec![0.0; 120], 12, &DecompositionConfig::default()).unwrap();
        assert_eq!(d.offset, 0.0);
        for i in 0..x.len() {
            assert!(
                (d.anomaly[i] - 1.0).abs() < 0.02,
                "a[{i}] = {}",
                d.anomaly[i]
            );
            assert!(
                (d.residual[i] - 1.0).abs() < 0.02,
                "r[{i}] = {}",
                d.residual[i]
            );
        }
    }

    #[test]
    fn flat_series_has_no_anomalies() {
        let d = decompose(&[7.0; 24], &[0.0; 24], 4, &DecompositionConfig::default()).unwrap();
        assert!(d.anomaly.iter().all(|&a| a == 1.0));
        assert!(d.scores.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn injected_spike_is_flagged_with_top_score() {
        let mut x = pure(60, 6);
        x[33] *= 3.0;
        let d = decompose(&x, &vec![0.0; 60], 6, &DecompositionConfig::default()).unwrap();
        let top = (0..60)
            .max_by(|&a, &b| d.scores[a].total_cmp(&d.scores[b]))
            .unwrap();
        assert_eq!(top, 33);
        assert!(d.anomaly[33] != 1.0);
        assert_eq!(d.residual[33], 1.0);
    }

    #[test]
    fn zeros_get_an_offset() {
        let mut x = pure(48, 12);
        x[5] = 0.0;
        x[17] = 0.0;
        let d = decompose(&x, &vec![0.0; 48], 12, &DecompositionConfig::default()).unwrap();
        assert!(d.offset > 0.0);
        for i in 0..48 {
            let rel = (d.reconstruct(i) + d.offset - (x[i] + d.offset)).abs() / (x[i] + d.offset);
            assert!(rel < 1e-9);
        }
    }

    #[test]
    fn negative_values_are_shifted() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
        let d = decompose(&x, &vec![0.0; 40], 4, &DecompositionConfig::default()).unwrap();
        let min = x.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(d.offset > -min);
        assert!(d.trend.iter().all(|&t| t > 0.0));
    }

    #[test]
    fn too_short_or_mismatched() {
        let cfg = DecompositionConfig::default();
        assert!(decompose(&[1.0; 10], &[0.0; 10], 6, &cfg).is_err());
        assert!(decompose(&[1.0; 12], &[0.0; 11], 6, &cfg).is_err());
        assert!(decompose(&[1.0; 12], &[0.0; 12], 1, &cfg).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn identity_and_channel_invariants(
            seed in 0u64..10_000,
            cycle in 2usize..13,
            periods in 2usize..8,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            // span 0.3 needs at least 7 points for a local line
            let n = (cycle * periods + rng.random_range(0..cycle)).max(7);
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..50.0)).collect();
            let d = decompose(&x, &vec![0.0; n], cycle, &DecompositionConfig::default()).unwrap();
            for i in 0..n {
                let lhs = d.seasonal[i] * d.trend[i] * d.anomaly[i] * d.residual[i];
                let rhs = x[i] + d.offset;
                prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs());
                if d.scores[i] <= d.cutoff {
                    prop_assert_eq!(d.anomaly[i], 1.0);
                }
                if d.anomaly[i] != 1.0 {
                    prop_assert_eq!(d.residual[i], 1.0);
                }
                prop_assert_eq!(d.seasonal[i], d.seasonal[i % cycle]);
            }
            let mean = d.seasonal[..cycle].iter().sum::<f64>() / cycle as f64;
            prop_assert!((mean - 1.0).abs() < 1e-12);
            let flagged = d.anomaly.iter().filter(|&&a| a != 1.0).count();
            prop_assert!(flagged <= anomaly_budget(n, 0.05));
        }
    }
}
