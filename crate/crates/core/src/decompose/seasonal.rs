use crate::error::{Error, Result};

/// Per-phase means of the detrended series, rescaled to average 1 and tiled
/// over the input length. Phase 0 is the first observation.
pub fn seasonal_indices(detrended: &[f64], cycle: usize) -> Result<Vec<f64>> {
    if cycle < 2 {
        return Err(Error::InvalidArgument(format!(
            "cycle must be at least 2, got {cycle}"
        )));
    }
    if detrended.len() < 2 * cycle {
        return Err(Error::WindowTooLong {
            tau: cycle,
            len: detrended.len(),
            need: 2 * cycle,
        });
    }
    let mut sums = vec![0.0; cycle];
    let mut counts = vec![0usize; cycle];
    for (i, v) in detrended.iter().enumerate() {
        sums[i % cycle] += v;
        counts[i % cycle] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| s / c as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / cycle as f64;
    if !(grand > 0.0) {
        return Err(Error::InvalidArgument(
            "seasonal indices need a positive mean level".into(),
        ));
    }
    let indices: Vec<f64> = means.iter().map(|m| m / grand).collect();
    Ok((0..detrended.len()).map(|i| indices[i % cycle]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_stay_ones() {
        assert!(seasonal_indices(&[1.0; 12], 3)
            .unwrap()
            .iter()
            .all(|&v| v == 1.0));
    }

    #[test]
    fn two_phase_example() {
        let s = seasonal_indices(&[2.0, 0.5, 2.0, 0.5], 2).unwrap();
        let want = [1.6, 0.4, 1.6, 0.4];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn monthly_cycle_tiles_twelve_indices() {
        let d: Vec<f64> = (0..48).map(|i| 1.0 + 0.05 * (i % 12) as f64).collect();
        let s = seasonal_indices(&d, 12).unwrap();
        let mut distinct: Vec<f64> = s[..12].to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct.len(), 12);
        assert_eq!(&s[..12], &s[12..24]);
        assert_eq!(&s[..12], &s[36..48]);
        let mean = s[..12].iter().sum::<f64>() / 12.0;
        assert!((mean - 1.0).abs() < 1e-12);
    }

    #[test]
    fn preconditions() {
        assert!(seasonal_indices(&[1.0; 10], 1).is_err());
        assert!(seasonal_indices(&[1.0; 5], 3).is_err());
    }
}
