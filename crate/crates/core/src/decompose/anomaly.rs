use crate::error::{Error, Result};

/// `|r_i - median(r)|` scaled by the square root of the mean absolute
/// deviation from the median (with `T - 1` in the denominator).
pub fn robustness_scores(r: &[f64]) -> Result<Vec<f64>> {
    let n = r.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "robustness scores need at least 2 residuals, got {n}"
        )));
    }
    let med = super::median(&mut r.to_vec());
    let dev: Vec<f64> = r.iter().map(|v| (v - med).abs()).collect();
    let denom = (dev.iter().sum::<f64>() / (n - 1) as f64).sqrt();
    if denom == 0.0 || !denom.is_finite() {
        return Err(Error::DegenerateResiduals);
    }
    Ok(dev.into_iter().map(|d| d / denom).collect())
}

/// Number of points inside the anomaly budget: `ceil(p * T)`.
pub fn anomaly_budget(n: usize, p: f64) -> usize {
    ((p * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Cut-off score separating the `ceil(p * T)` largest scores from the rest.
///
/// Returns the largest score outside the budget, i.e. the
/// `(ceil(p * T) + 1)`-th score in descending order (the smallest score when
/// the budget covers every point). With the strict `>` rule of
/// [`extract_anomalies`] exactly the budgeted points are flagged, minus
/// any that tie with the cut-off.
pub fn threshold(scores: &[f64], p: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("threshold of empty scores".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "p must be in (0, 1), got {p}"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let rank = anomaly_budget(scores.len(), p).min(scores.len() - 1);
    Ok(sorted[rank])
}

/// Moves residual mass above the cut-off into the anomaly channel.
///
/// Where a score is above `cutoff` the anomaly takes the residual and the residual
/// becomes 1; elsewhere the anomaly is 1. Ties are not anomalous.
pub fn extract_anomalies(r: &[f64], scores: &[f64], cutoff: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if r.len() != scores.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} residuals vs {} scores",
            r.len(),
            scores.len()
        )));
    }
    Ok(r.iter()
        .zip(scores)
        .map(|(&ri, &pi)| if pi > cutoff { (ri, 1.0) } else { (1.0, ri) })
        .unzip())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn score_example() {
        let scores = robustness_scores(&[1.0, 1.0, 1.0, 1.0, 2.0]).unwrap();
        assert_eq!(scores, vec![0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn constant_residuals_are_degenerate() {
        assert!(matches!(
            robustness_scores(&[3.0; 8]),
            Err(Error::DegenerateResiduals)
        ));
    }

    #[test]
    fn doubling_deviations_scales_by_sqrt2() {
        let r = [1.0, 1.3, 0.9, 1.0, 1.1, 0.6, 1.0];
        let med = 1.0;
        let doubled: Vec<f64> = r.iter().map(|v| med + 2.0 * (v - med)).collect();
        let a = robustness_scores(&r).unwrap();
        let b = robustness_scores(&doubled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x * 2f64.sqrt()).abs() < 1e-12);
        }
    }

    fn sort_desc(v: &[f64]) -> Vec<f64> {
        let mut s = v.to_vec();
        s.sort_by(|a, b| b.partial_cmp(a).unwrap());
        s
    }

    #[test]
    fn threshold_ranks() {
        let scores20: Vec<f64> = (0..20).map(|i| ((i * 7) % 20) as f64).collect();
        // budget ceil(0.05 * 20) = 1: the cut-off is the second largest
        assert_eq!(threshold(&scores20, 0.05).unwrap(), sort_desc(&scores20)[1]);
        let scores100: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64 / 3.0).collect();
        assert_eq!(
            threshold(&scores100, 0.05).unwrap(),
            sort_desc(&scores100)[5]
        );
        assert_eq!(threshold(&[2.5; 9], 0.05).unwrap(), 2.5);
        assert!(threshold(&[], 0.05).is_err());
        assert!(threshold(&[1.0], 1.0).is_err());
    }

    #[test]
    fn extraction_branches() {
        let (a, r) = extract_anomalies(&[0.9, 1.1], &[0.1, 0.2], 1.0).unwrap();
        assert_eq!(a, vec![1.0, 1.0]);
        assert_eq!(r, vec![0.9, 1.1]);

        let (a, r) = extract_anomalies(&[1.0, 5.0], &[0.0, 3.0], 2.0).unwrap();
        assert_eq!(a, vec![1.0, 5.0]);
        assert_eq!(r, vec![1.0, 1.0]);

        let (a, _) = extract_anomalies(&[4.0], &[2.0], 2.0).unwrap();
        assert_eq!(a, vec![1.0], "ties are not anomalous");
        assert!(extract_anomalies(&[1.0], &[1.0, 2.0], 0.0).is_err());
    }

    proptest! {
        #[test]
        fn flag_budget(r in prop::collection::vec(0.5f64..2.0, 2..300)) {
            prop_assume!(r.iter().any(|v| *v != r[0]));
            let scores = robustness_scores(&r).unwrap();
            let c = threshold(&scores, 0.05).unwrap();
            let (a, adj) = extract_anomalies(&r, &scores, c).unwrap();
            let flagged = a.iter().zip(&scores).filter(|(_, p)| **p > c).count();
            let budget = anomaly_budget(r.len(), 0.05);
            let mut top = scores.clone();
            top.sort_by(|x, y| y.total_cmp(x));
            let ties = top[..budget].iter().filter(|v| **v == c).count();
            prop_assert_eq!(flagged, budget - ties);
            for i in 0..r.len() {
                prop_assert!(scores[i] >= 0.0);
                prop_assert!((a[i] * adj[i] - r[i]).abs() <= 1e-15 * r[i].abs());
            }
        }

        #[test]
        fn outlier_moves_median_at_most_one_order_statistic(
            r in prop::collection::vec(0.5f64..2.0, 3..100),
            big in 10.0f64..1e6,
        ) {
            let mut sorted = r.clone();
            sorted.sort_by(f64::total_cmp);
            let med = crate::decompose::median(&mut r.clone());
            let mut with = r.clone();
            with.push(big);
            let med2 = crate::decompose::median(&mut with);
            // the median can only move towards the next order statistic
            let n = sorted.len();
            let upper = sorted[n.div_ceil(2).min(n - 1)];
            prop_assert!(med2 >= med - 1e-15);
            prop_assert!(med2 <= upper + 1e-15);
        }
    }
}
