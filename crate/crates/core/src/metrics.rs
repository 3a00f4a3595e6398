//! CRPS, RMSE and evaluation reports.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ensemble CRPS, `mean|s - y| - mean|s_i - s_j| / 2`, computed from the
/// sorted ensemble in `O(M log M)`.
pub fn crps(samples: &[f64], y: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("CRPS of an empty ensemble".into()));
    }
    let m = samples.len() as f64;
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let abs_err = s.iter().map(|v| (v - y).abs()).sum::<f64>() / m;
    // sum over i < j of (s_j - s_i)
    let spread: f64 = s
        .iter()
        .enumerate()
        .map(|(i, v)| v * (2.0 * i as f64 - m + 1.0))
        .sum();
    Ok((abs_err - spread / (m * m)).max(0.0))
}

pub fn rmse(points: &[f64], observed: &[f64]) -> Result<f64> {
    if points.len() != observed.len() || points.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "RMSE needs equal non-empty lengths, got {} and {}",
            points.len(),
            observed.len()
        )));
    }
    let sq = points
        .iter()
        .zip(observed)
        .map(|(p, o)| (p - o).powi(2))
        .sum::<f64>();
    Ok((sq / points.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "80-20")]
    EightyTwenty,
    #[serde(rename = "zero-shot")]
    ZeroShot,
    #[serde(rename = "ablation")]
    Ablation,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::EightyTwenty => "80-20",
            Protocol::ZeroShot => "zero-shot",
            Protocol::Ablation => "ablation",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Protocol::EightyTwenty,
            Protocol::ZeroShot,
            Protocol::Ablation,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| Error::Config(format!("unknown protocol `{s}`")))
    }
}

/// One evaluated forecast, on the normalized scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub series: String,
    /// Index of the forecast value.
    pub t: usize,
    pub observed: f64,
    pub mean: f64,
    pub sd: f64,
    pub p_star: f64,
    pub crps: f64,
    pub q05: f64,
    pub q50: f64,
    pub q95: f64,
    /// Whether the forecast target index is critical.
    pub critical: bool,
}

/// CRPS and SD are means of per-step values; RMSE is the root of the mean
/// per-step squared error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub crps: f64,
    pub rmse: f64,
    pub sd: f64,
    pub steps: usize,
}

impl MetricSummary {
    pub fn of<'a>(steps: impl IntoIterator<Item = &'a StepRecord>) -> Option<Self> {
        let (mut n, mut crps, mut sq, mut sd) = (0usize, 0.0, 0.0, 0.0);
        for s in steps {
            n += 1;
            crps += s.crps;
            sq += (s.mean - s.observed).powi(2);
            sd += s.sd;
        }
        (n > 0).then(|| {
            let k = n as f64;
            Self {
                crps: crps / k,
                rmse: (sq / k).sqrt(),
                sd: sd / k,
                steps: n,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub id: String,
    #[serde(flatten)]
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub method: String,
    pub tau: usize,
    pub aggregate: MetricSummary,
    /// Steps whose target index is critical.
    pub critical: Option<MetricSummary>,
    pub series: Vec<SeriesSummary>,
    pub steps: Vec<StepRecord>,
    pub config: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn from_steps(
        protocol: Protocol,
        method: impl Into<String>,
        tau: usize,
        steps: Vec<StepRecord>,
        config: BTreeMap<String, String>,
    ) -> Result<Self> {
        let aggregate = MetricSummary::of(&steps)
            .ok_or_else(|| Error::InvalidArgument("no evaluated steps".into()))?;
        let critical = MetricSummary::of(steps.iter().filter(|s| s.critical));
        let mut ids: Vec<&str> = Vec::new();
        for s in &steps {
            if !ids.contains(&s.series.as_str()) {
                ids.push(&s.series);
            }
        }
        let series = ids
            .iter()
            .map(|id| SeriesSummary {
                id: id.to_string(),
                metrics: MetricSummary::of(steps.iter().filter(|s| s.series == *id))
                    .expect("id taken from steps"),
            })
            .collect();
        Ok(Self {
            protocol,
            method: method.into(),
            tau,
            aggregate,
            critical,
            series,
            steps,
            config,
        })
    }
}

/// Writes `method,metric,<tau...>` with CRPS, RMSE and SD rows per method.
pub fn write_table(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut taus: Vec<usize> = reports.iter().map(|r| r.tau).collect();
    taus.sort_unstable();
    taus.dedup();
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string(), "metric".to_string()];
    header.extend(taus.iter().map(|t| t.to_string()));
    w.write_record(&header)?;
    type Pick = fn(&MetricSummary) -> f64;
    let metrics: [(&str, Pick); 3] = [("CRPS", |m| m.crps), ("RMSE", |m| m.rmse), ("SD", |m| m.sd)];
    for method in methods {
        for (name, pick) in metrics {
            let mut row = vec![method.to_string(), name.to_string()];
            for t in &taus {
                row.push(
                    reports
                        .iter()
                        .find(|r| r.method == method && r.tau == *t)
                        .map(|r| format!("{:.6}", pick(&r.aggregate)))
                        .unwrap_or_default(),
                );
            }
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Exact integral of `(F(z) - 1{z >= y})^2` where `F` is the ensemble's
    /// step CDF, summed interval by interval.
    fn crps_quadrature(samples: &[f64], y: f64) -> f64 {
        let mut pts: Vec<f64> = samples.to_vec();
        pts.push(y);
        pts.sort_by(f64::total_cmp);
        let m = samples.len() as f64;
        let mut total = 0.0;
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            let mid = 0.5 * (a + b);
            let f = samples.iter().filter(|&&s| s <= mid).count() as f64 / m;
            let step = if mid >= y { 1.0 } else { 0.0 };
            total += (f - step).powi(2) * (b - a);
        }
        total
    }

    #[test]
    fn protocol_names_round_trip() {
        for p in [
            Protocol::EightyTwenty,
            Protocol::ZeroShot,
            Protocol::Ablation,
        ] {
            assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
            assert_eq!(serde_json::to_string(&p).unwrap(), format!("\"{p}\""));
        }
        assert!("holdout".parse::<Protocol>().is_err());
    }

    #[test]
    fn examples() {
        assert_eq!(crps(&[2.5; 10], 1.0).unwrap(), 1.5);
        assert!((crps(&[0.0, 1.0], 1.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((crps_quadrature(&[0.0, 1.0], 1.0) - 0.25).abs() < 1e-15);
        assert!(crps(&[], 0.0).is_err());
        let wide: Vec<f64> = (0..21).map(|i| i as f64 - 10.0).collect();
        let far: Vec<f64> = wide.iter().map(|v| v + 100.0).collect();
        assert!(crps(&far, 0.0).unwrap() > crps(&wide, 0.0).unwrap());
    }

    #[test]
    fn matches_quadrature() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let m = rng.random_range(1..40);
            let s: Vec<f64> = (0..m).map(|_| rng.random_range(-3.0..3.0)).collect();
            let y = rng.random_range(-4.0..4.0);
            assert!((crps(&s, y).unwrap() - crps_quadrature(&s, y)).abs() < 1e-6);
        }
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(
            rmse(&[4.0, 3.0], &[0.0, 0.0]).unwrap(),
            rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap()
        );
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    fn step(series: &str, t: usize, err: f64, sd: f64, critical: bool) -> StepRecord {
        StepRecord {
            series: series.into(),
            t,
            observed: 0.0,
            mean: err,
            sd,
            p_star: 0.1,
            crps: err.abs(),
            q05: err,
            q50: err,
            q95: err,
            critical,
        }
    }

    #[test]
    fn aggregates_are_step_means() {
        let steps = vec![
            step("a", 1, 3.0, 0.5, false),
            step("a", 2, -4.0, 0.1, true),
            step("b", 1, 1.0, 0.3, false),
        ];
        let r = EvalReport::from_steps(Protocol::EightyTwenty, "full", 12, steps, BTreeMap::new())
            .unwrap();
        assert!((r.aggregate.crps - 8.0 / 3.0).abs() < 1e-12);
        assert!((r.aggregate.sd - 0.3).abs() < 1e-12);
        assert!((r.aggregate.rmse - (26.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.critical.unwrap().steps, 1);
        assert_eq!(r.series.len(), 2);
        assert_eq!(r.series[0].metrics.steps, 2);
        assert!(
            EvalReport::from_steps(Protocol::ZeroShot, "x", 3, vec![], BTreeMap::new()).is_err()
        );
    }

    #[test]
    fn table_layout() {
        let mk = |method: &str, tau| {
            EvalReport::from_steps(
                Protocol::Ablation,
                method,
                tau,
                vec![step("a", 1, 1.0, 0.2, false)],
                BTreeMap::new(),
            )
            .unwrap()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_table(
            &[mk("full", 12), mk("full", 3), mk("w/o attention", 12)],
            &path,
        )
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,metric,3,12");
        assert_eq!(lines[1], "full,CRPS,1.000000,1.000000");
        assert_eq!(lines[6], "w/o attention,SD,,0.200000");
        assert_eq!(lines.len(), 7);
    }
}
