//! Synthetic series with known structure and injected anomalies/events.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::kv::{parse_pairs, KvConfig};
use crate::rng;
use crate::series::RawSeries;

/// One generated series: `x_i = trend_i * seasonal_i * noise_i`, then
/// multiplied by the anomaly magnitude at every anomaly index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub id: String,
    pub len: usize,
    pub cycle: usize,
    /// Trend intercept.
    pub level: f64,
    /// Trend increment per step.
    pub slope: f64,
    /// Harmonic amplitudes: `seasonal_i = 1 + sum_k amp_k sin(2 pi (k+1) i / cycle)`.
    pub amp: Vec<f64>,
    /// Explicit seasonal pattern of length `cycle`; overrides `amp`.
    pub pattern: Option<Vec<f64>>,
    /// Log-normal noise scale; 0 means no noise.
    pub noise: f64,
    pub anomalies: Vec<(usize, f64)>,
    pub events: Vec<(usize, f64)>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            id: "synth".into(),
            len: 144,
            cycle: 12,
            level: 100.0,
            slope: 0.2,
            amp: vec![0.2],
            pattern: None,
            noise: 0.02,
            anomalies: Vec::new(),
            events: Vec::new(),
        }
    }
}

impl ScenarioConfig {
    /// Reads keys `T, cycle, level, slope, amp, pattern, noise, anomalies,
    /// events, id`. Injection lists are `index:value` pairs.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let pairs = |key: &str| -> Result<Vec<(usize, f64)>> {
            match kv.get(key) {
                None => Ok(Vec::new()),
                Some(v) => parse_pairs(v)
                    .map_err(|bad| Error::Config(format!("key `{key}`: cannot parse `{bad}`"))),
            }
        };
        Ok(Self {
            id: kv.get("id").map(str::to_string).unwrap_or(d.id),
            len: kv.parse_or("T", d.len)?,
            cycle: kv.parse_or("cycle", d.cycle)?,
            level: kv.parse_or("level", d.level)?,
            slope: kv.parse_or("slope", d.slope)?,
            amp: kv.parse_list("amp")?.unwrap_or(d.amp),
            pattern: kv.parse_list("pattern")?,
            noise: kv.parse_or("noise", d.noise)?,
            anomalies: pairs("anomalies")?,
            events: pairs("events")?,
        })
    }

    fn seasonal(&self, i: usize) -> f64 {
        match &self.pattern {
            Some(p) => p[i % self.cycle],
            None => {
                let phase = 2.0 * std::f64::consts::PI * i as f64 / self.cycle as f64;
                1.0 + self
                    .amp
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a * ((k + 1) as f64 * phase).sin())
                    .sum::<f64>()
            }
        }
    }
}

pub fn synth_generate(cfg: &ScenarioConfig, seed: u64) -> Result<RawSeries> {
    let n = cfg.len;
    if cfg.cycle == 0 {
        return Err(Error::InvalidArgument("cycle must be positive".into()));
    }
    if let Some(p) = &cfg.pattern {
        if p.len() != cfg.cycle {
            return Err(Error::InvalidArgument(format!(
                "seasonal pattern has {} entries, cycle is {}",
                p.len(),
                cfg.cycle
            )));
        }
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise scale must be >= 0, got {}",
            cfg.noise
        )));
    }
    for &(i, _) in cfg.anomalies.iter().chain(&cfg.events) {
        if i >= n {
            return Err(Error::InvalidArgument(format!(
                "injection index {i} out of range for length {n}"
            )));
        }
    }
    if let Some(&(i, m)) = cfg
        .anomalies
        .iter()
        .find(|(_, m)| !(*m > 0.0 && m.is_finite()))
    {
        return Err(Error::InvalidArgument(format!(
            "anomaly magnitude at {i} must be positive, got {m}"
        )));
    }

    let mut noise_rng = rng::stream(seed, &[0x5EED]);
    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let trend = cfg.level + cfg.slope * i as f64;
        let seasonal = cfg.seasonal(i);
        if !(trend > 0.0 && seasonal > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "non-positive base value at {i}: trend {trend}, seasonal {seasonal}"
            )));
        }
        let z: f64 = StandardNormal.sample(&mut noise_rng);
        let noise = if cfg.noise > 0.0 {
            (cfg.noise * z).exp()
        } else {
            1.0
        };
        values.push(trend * seasonal * noise);
    }
    for &(i, m) in &cfg.anomalies {
        values[i] *= m;
    }
    let mut events = vec![0.0; n];
    for &(i, level) in &cfg.events {
        events[i] = level;
    }
    RawSeries::indexed(cfg.id.clone(), values, events, cfg.cycle)
}

/// Series whose extreme events trigger a series-specific response one step
/// later. Events are spaced farther apart than `min_gap`, so a forecaster
/// can only recall a series' past response through memory that outlives
/// its input window.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCorpusConfig {
    pub series: usize,
    pub len: usize,
    pub cycle: usize,
    pub noise: f64,
    pub events_per_series: usize,
    pub min_gap: usize,
    pub response_lag: usize,
    /// Response strength range; each series draws one strength and a
    /// direction (up: `1 + u`, down: `1 / (1 + u)`).
    pub response: (f64, f64),
    /// Unprovoked spikes per series.
    pub spikes: usize,
    /// Every series gets the same seasonal shape and no trend, so after
    /// normalization only its event history tells it apart.
    pub shared_shape: bool,
    pub id_prefix: String,
}

impl Default for EventCorpusConfig {
    fn default() -> Self {
        Self {
            series: 16,
            len: 192,
            cycle: 12,
            noise: 0.02,
            events_per_series: 5,
            min_gap: 16,
            response_lag: 1,
            response: (0.6, 1.6),
            spikes: 0,
            shared_shape: true,
            id_prefix: "ev".into(),
        }
    }
}

fn random_harmonics<R: Rng>(rng: &mut R) -> Vec<f64> {
    vec![rng.random_range(0.1..0.3), rng.random_range(-0.08..0.08)]
}

pub fn event_response_corpus(cfg: &EventCorpusConfig, seed: u64) -> Result<Vec<RawSeries>> {
    let span_needed = cfg.cycle + cfg.events_per_series * (cfg.min_gap + 1) + cfg.response_lag + 1;
    if span_needed > cfg.len {
        return Err(Error::InvalidArgument(format!(
            "{} events with gap {} do not fit in length {}",
            cfg.events_per_series, cfg.min_gap, cfg.len
        )));
    }
    (0..cfg.series)
        .map(|k| {
            let mut r = rng::stream(seed, &[0xC0, k as u64]);
            let level = r.random_range(20.0..100.0);
            let strength = r.random_range(cfg.response.0..cfg.response.1);
            let factor = if r.random_bool(0.5) {
                1.0 + strength
            } else {
                1.0 / (1.0 + strength)
            };

            // spread events over [cycle, len - lag - 1) with jitter inside each slot
            let start = cfg.cycle;
            let end = cfg.len - cfg.response_lag - 1;
            let slot = (end - start) / cfg.events_per_series.max(1);
            let mut events = Vec::new();
            let mut anomalies = Vec::new();
            for j in 0..cfg.events_per_series {
                let jitter = slot.saturating_sub(cfg.min_gap + 1);
                let at = start
                    + j * slot
                    + if jitter > 0 {
                        r.random_range(0..=jitter)
                    } else {
                        0
                    };
                events.push((at, 1.0));
                let wobble = r.random_range(0.97..1.03);
                anomalies.push((at + cfg.response_lag, factor * wobble));
            }
            for _ in 0..cfg.spikes {
                let at = r.random_range(cfg.cycle..cfg.len);
                if anomalies.iter().all(|(i, _)| *i != at) {
                    anomalies.push((at, r.random_range(1.8..2.5)));
                }
            }
            let scenario = ScenarioConfig {
                id: format!("{}-{k:03}", cfg.id_prefix),
                len: cfg.len,
                cycle: cfg.cycle,
                level,
                slope: if cfg.shared_shape {
                    0.0
                } else {
                    r.random_range(-0.05..0.15) * level / cfg.len as f64
                },
                amp: if cfg.shared_shape {
                    vec![0.2, 0.05]
                } else {
                    random_harmonics(&mut r)
                },
                pattern: None,
                noise: cfg.noise,
                anomalies,
                events,
            };
            synth_generate(&scenario, rng::derive_seed(seed, &[0xC1, k as u64]))
        })
        .collect()
}

/// Series whose seasonal pattern is a product of random factors repeating
/// with each of `periods`. A window of length `L` sees the factors of every
/// period up to `L` at the phase of the next step, so longer windows carry
/// strictly more information about the next value.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedSeasonalConfig {
    pub series: usize,
    pub len: usize,
    pub periods: Vec<usize>,
    pub factor_sd: f64,
    pub noise: f64,
    pub id_prefix: String,
}

impl Default for NestedSeasonalConfig {
    fn default() -> Self {
        Self {
            series: 20,
            len: 192,
            periods: vec![3, 6, 12, 24],
            factor_sd: 0.12,
            noise: 0.01,
            id_prefix: "ns".into(),
        }
    }
}

pub fn nested_seasonal_corpus(cfg: &NestedSeasonalConfig, seed: u64) -> Result<Vec<RawSeries>> {
    let cycle = cfg.periods.iter().copied().max().ok_or_else(|| {
        Error::InvalidArgument("nested seasonal corpus needs at least one period".into())
    })?;
    if let Some(p) = cfg.periods.iter().find(|p| **p == 0 || cycle % **p != 0) {
        return Err(Error::InvalidArgument(format!(
            "period {p} does not divide cycle {cycle}"
        )));
    }
    (0..cfg.series)
        .map(|k| {
            let mut r = rng::stream(seed, &[0xD0, k as u64]);
            let mut pattern = vec![1.0; cycle];
            for &p in &cfg.periods {
                let factors: Vec<f64> = (0..p)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut r);
                        (cfg.factor_sd * z).exp()
                    })
                    .collect();
                for (phi, v) in pattern.iter_mut().enumerate() {
                    *v *= factors[phi % p];
                }
            }
            let level = r.random_range(20.0..100.0);
            let scenario = ScenarioConfig {
                id: format!("{}-{k:03}", cfg.id_prefix),
                len: cfg.len,
                cycle,
                level,
                slope: r.random_range(-0.05..0.1) * level / cfg.len as f64,
                amp: Vec::new(),
                pattern: Some(pattern),
                noise: cfg.noise,
                anomalies: Vec::new(),
                events: Vec::new(),
            };
            synth_generate(&scenario, rng::derive_seed(seed, &[0xD1, k as u64]))
        })
        .collect()
}
