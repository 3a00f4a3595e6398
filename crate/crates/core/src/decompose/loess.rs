//! Degree-1 LOESS on an equally spaced grid.

use crate::error::{Error, Result};

/// Output floor so the trend can divide the series.
pub const TREND_FLOOR: f64 = 1e-12;

#[inline]
fn tricube(u: f64) -> f64 {
    let u = u.abs();
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u * u;
        t * t * t
    }
}

#[inline]
fn bisquare(u: f64) -> f64 {
    let u = u.abs();
    if u >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        t * t
    }
}

/// Number of neighbours used by each local fit.
pub fn neighbourhood_size(n: usize, span: f64) -> Result<usize> {
    if !(span > 0.0 && span <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "span must be in (0, 1], got {span}"
        )));
    }
    let raw = span * n as f64;
    if raw < 2.0 {
        return Err(Error::InvalidArgument(format!(
            "span {span} covers {raw:.3} points; a local linear fit needs at least 2"
        )));
    }
    Ok(((raw - 1e-9).ceil() as usize).clamp(2, n))
}

/// The `q` contiguous indices nearest to `i` (ties extend to the right).
#[inline]
pub(crate) fn window_bounds(i: usize, q: usize, n: usize) -> (usize, usize) {
    let lo = i.saturating_sub((q - 1) / 2).min(n - q);
    (lo, lo + q)
}

/// Smooths `y` with local linear fits and tricube distance weights.
///
/// Every local fit uses the `ceil(span * n)` nearest points. The kernel
/// bandwidth is one grid step past the farthest neighbour so that all of
/// them carry positive weight. `robust_iterations` extra passes reweight
/// points by the bisquare of their residual over six median absolute
/// residuals.
pub fn loess(y: &[f64], span: f64, robust_iterations: usize) -> Result<Vec<f64>> {
    let n = y.len();
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "loess needs at least 4 points, got {n}"
        )));
    }
    let q = neighbourhood_size(n, span)?;
    let mut robustness = vec![1.0; n];
    let mut fit = vec![0.0; n];
    for pass in 0..=robust_iterations {
        for (i, out) in fit.iter_mut().enumerate() {
            *out = local_fit(y, i, q, &robustness);
        }
        if pass == robust_iterations {
            break;
        }
        let mut abs_res: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| (a - b).abs()).collect();
        let scale = 6.0 * super::median(&mut abs_res);
        if scale <= 0.0 {
            break;
        }
        for ((w, a), b) in robustness.iter_mut().zip(y).zip(&fit) {
            *w = bisquare((a - b) / scale);
        }
    }
    Ok(fit)
}

fn local_fit(y: &[f64], i: usize, q: usize, robustness: &[f64]) -> f64 {
    let (lo, hi) = window_bounds(i, q, y.len());
    let reach = (i - lo).max(hi - 1 - i) as f64;
    let bandwidth = reach + 1.0;

    let (mut sw, mut swx, mut swy) = (0.0, 0.0, 0.0);
    for j in lo..hi {
        let w = tricube((j as f64 - i as f64) / bandwidth) * robustness[j];
        sw += w;
        swx += w * j as f64;
        swy += w * y[j];
    }
    if sw <= 0.0 {
        return y[i];
    }
    let (xm, ym) = (swx / sw, swy / sw);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for j in lo..hi {
        let w = tricube((j as f64 - i as f64) / bandwidth) * robustness[j];
        let dx = j as f64 - xm;
        sxx += w * dx * dx;
        sxy += w * dx * (y[j] - ym);
    }
    let slope = if sxx > 1e-12 * sw { sxy / sxx } else { 0.0 };
    ym + slope * (i as f64 - xm)
}

/// Trend of a strictly positive series; the result is floored at
/// [`TREND_FLOOR`].
pub fn loess_trend(x: &[f64], span: f64) -> Result<Vec<f64>> {
    loess_trend_robust(x, span, 0)
}

pub fn loess_trend_robust(x: &[f64], span: f64, robust_iterations: usize) -> Result<Vec<f64>> {
    if let Some(i) = x.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "trend input must be positive and finite; index {i} is {}",
            x[i]
        )));
    }
    let mut t = loess(x, span, robust_iterations)?;
    for v in &mut t {
        *v = v.max(TREND_FLOOR);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn reproduces_lines() {
        let x: Vec<f64> = (0..50).map(|i| 2.0 * i as f64 + 5.0).collect();
        for span in [0.05, 0.1, 0.3, 0.7, 1.0] {
            let t = loess_trend(&x, span).unwrap();
            for (a, b) in t.iter().zip(&x) {
                assert!((a - b).abs() < 1e-8, "span {span}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn constant_stays_constant() {
        let t = loess_trend(&[7.0; 30], 0.3).unwrap();
        assert!(t.iter().all(|v| (v - 7.0).abs() < 1e-12));
    }

    /// Weighted normal equations solved directly at every point.
    fn oracle(y: &[f64], span: f64) -> Vec<f64> {
        let n = y.len();
        let q = (span * n as f64).ceil() as usize;
        (0..n)
            .map(|i| {
                // nearest q points by distance, ties to the right
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by_key(|&j| (2 * (j as i64 - i as i64).unsigned_abs() as usize, j < i));
                let nb = &idx[..q];
                let h = nb
                    .iter()
                    .map(|&j| (j as f64 - i as f64).abs())
                    .fold(0.0, f64::max)
                    + 1.0;
                let (mut a00, mut a01, mut a11, mut b0, mut b1) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for &j in nb {
                    let u = (j as f64 - i as f64).abs() / h;
                    let w = (1.0 - u.powi(3)).powi(3);
                    let xj = j as f64;
                    a00 += w;
                    a01 += w * xj;
                    a11 += w * xj * xj;
                    b0 += w * y[j];
                    b1 += w * xj * y[j];
                }
                let det = a00 * a11 - a01 * a01;
                let c0 = (a11 * b0 - a01 * b1) / det;
                let c1 = (a00 * b1 - a01 * b0) / det;
                c0 + c1 * i as f64
            })
            .collect()
    }

    #[test]
    fn matches_weighted_normal_equations() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for (n, span) in [(40, 1.0), (40, 0.3), (25, 0.5), (60, 0.1)] {
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..10.0)).collect();
            let got = loess(&y, span, 0).unwrap();
            let want = oracle(&y, span);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "n={n} span={span}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn full_span_on_a_line_plus_symmetric_noise_is_close_to_ols() {
        // Tricube weights make span=1 differ from ordinary least squares
        // in general; on a line they coincide.
        let y: Vec<f64> = (0..30).map(|i| 1.0 + 0.5 * i as f64).collect();
        let t = loess(&y, 1.0, 0).unwrap();
        for (a, b) in t.iter().zip(&y) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn underdetermined_span_is_rejected() {
        assert!(loess_trend(&[1.0; 10], 0.15).is_err());
        assert!(loess_trend(&[1.0; 10], 0.2).is_ok());
        assert!(loess_trend(&[1.0; 3], 1.0).is_err());
        assert!(loess_trend(&[1.0, 0.0, 1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn robust_passes_downweight_outliers() {
        let mut y: Vec<f64> = (0..40).map(|i| 10.0 + 0.1 * i as f64).collect();
        y[20] = 100.0;
        let plain = loess(&y, 0.3, 0).unwrap();
        let robust = loess(&y, 0.3, 2).unwrap();
        let truth = 10.0 + 0.1 * 21.0;
        assert!((robust[21] - truth).abs() < (plain[21] - truth).abs());
    }
}
