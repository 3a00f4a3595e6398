//! End-to-end protocols: feature preparation, training, per-step
//! probabilistic evaluation, zero-shot transfer and ablations.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decompose::{decompose, DecompositionConfig};
use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::metrics::{crps, EvalReport, Protocol, StepRecord};
use crate::model::{train, AAModel, HiddenBank, ModelConfig, Preset, TrainConfig, TrainOutcome};
use crate::nn::{CellKind, OptimizerKind};
use crate::rng;
use crate::series::{train_len, Dataset, Normalizer, RawSeries};
use crate::uncertainty::{
    dynamic_optimize, ForecastDistribution, UncertaintyConfig, WindowForecaster,
};
use crate::window::{window_at, ChannelLayout, FeatureSeries};

/// Model variant compared in ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    None,
    /// Raw `(x, e)` input instead of the decomposed channels.
    NoStar,
    /// Static dropout probability at inference instead of the grid search.
    NoUncertainty,
    /// Hidden states go straight to the head at every step.
    NoAttention,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::None,
        Ablation::NoStar,
        Ablation::NoUncertainty,
        Ablation::NoAttention,
    ];

    pub fn method(self) -> &'static str {
        match self {
            Ablation::None => "full",
            Ablation::NoStar => "w/o decomposition",
            Ablation::NoUncertainty => "w/o uncertainty optimization",
            Ablation::NoAttention => "w/o anomaly attention",
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "full" => Ok(Ablation::None),
            "no-star" => Ok(Ablation::NoStar),
            "no-uncertainty" => Ok(Ablation::NoUncertainty),
            "no-attention" => Ok(Ablation::NoAttention),
            other => Err(Error::Config(format!(
                "unknown ablation `{other}` (none, no-star, no-uncertainty, no-attention)"
            ))),
        }
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Ablation::None => "none",
            Ablation::NoStar => "no-star",
            Ablation::NoUncertainty => "no-uncertainty",
            Ablation::NoAttention => "no-attention",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub decomposition: DecompositionConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub uncertainty: UncertaintyConfig,
    /// Seed for parameter initialization.
    pub model_seed: u64,
    /// Zero-shot forecasts start at this index for every window length, so
    /// runs with different windows score the same targets.
    pub zero_shot_warmup: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            decomposition: DecompositionConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            model_seed: 0,
            zero_shot_warmup: 24,
        }
    }
}

impl PipelineConfig {
    /// One seed for initialization, batch order, dropout masks and sampling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.model_seed = seed;
        self.train.seed = seed;
        self.uncertainty.seed = seed;
        self
    }

    pub fn with_tau(mut self, tau: usize) -> Self {
        self.model.tau = tau;
        self
    }

    /// Settings of the model variant trained for `ablation`.
    pub fn for_ablation(&self, ablation: Ablation) -> Self {
        let mut c = self.clone();
        match ablation {
            Ablation::NoStar => c.model.layout = ChannelLayout::Raw,
            Ablation::NoAttention => c.model.attention = false,
            Ablation::None | Ablation::NoUncertainty => {}
        }
        c
    }

    /// Reads recognised keys on top of the defaults. `preset` applies a
    /// per-dataset hyperparameter set before the individual keys.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        if let Some(preset) = kv.parse::<Preset>("preset")? {
            let (train, dropout) = preset.settings();
            c.train = train;
            c.model.static_dropout = dropout;
        }
        let d = &mut c.decomposition;
        d.span = kv.parse_or("span", d.span)?;
        d.robust_iterations = kv.parse_or("robust_iterations", d.robust_iterations)?;
        d.anomaly_p = kv.parse_or("anomaly_p", d.anomaly_p)?;
        d.passes = kv.parse_or("passes", d.passes)?;

        let m = &mut c.model;
        m.cell = kv.parse_or("cell", m.cell)?;
        m.hidden = kv.parse_or("hidden", m.hidden)?;
        m.tau = kv.parse_or("tau", m.tau)?;
        m.attention = kv.parse_or("attention", m.attention)?;
        m.static_dropout = kv.parse_or("static_dropout", m.static_dropout)?;

        let t = &mut c.train;
        t.batch = kv.parse_or("batch", t.batch)?;
        t.lr = kv.parse_or("lr", t.lr)?;
        t.weight_decay = kv.parse_or("weight_decay", t.weight_decay)?;
        t.epochs = kv.parse_or("epochs", t.epochs)?;
        t.optimizer = kv.parse_or("optimizer", t.optimizer)?;
        t.clip = kv.parse_or("clip", t.clip)?;
        t.val_fraction = kv.parse_or("val_fraction", t.val_fraction)?;

        let u = &mut c.uncertainty;
        u.grid = kv
            .parse_list("grid")?
            .unwrap_or(std::mem::take(&mut u.grid));
        u.samples = kv.parse_or("mc_samples", u.samples)?;
        c.zero_shot_warmup = kv.parse_or("warmup", c.zero_shot_warmup)?;

        let seed = kv.parse_or("seed", 0u64)?;
        let c = c.with_seed(seed);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.uncertainty.grid.is_empty()
            || self
                .uncertainty
                .grid
                .iter()
                .any(|p| !(0.0..1.0).contains(p))
        {
            return Err(Error::Config(
                "dropout grid must be non-empty with values in [0, 1)".into(),
            ));
        }
        if self.uncertainty.samples < 2 {
            return Err(Error::Config("mc_samples must be at least 2".into()));
        }
        if !(self.decomposition.span > 0.0 && self.decomposition.span <= 1.0) {
            return Err(Error::Config("span must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Every recognised key with its resolved value.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        let cell = match self.model.cell {
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        };
        let optimizer = match self.train.optimizer {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        };
        let grid: Vec<String> = self.uncertainty.grid.iter().map(f64::to_string).collect();
        for (k, v) in [
            ("span", self.decomposition.span.to_string()),
            (
                "robust_iterations",
                self.decomposition.robust_iterations.to_string(),
            ),
            ("anomaly_p", self.decomposition.anomaly_p.to_string()),
            ("passes", self.decomposition.passes.to_string()),
            ("cell", cell.to_string()),
            ("hidden", self.model.hidden.to_string()),
            ("tau", self.model.tau.to_string()),
            ("attention", self.model.attention.to_string()),
            ("static_dropout", self.model.static_dropout.to_string()),
            ("batch", self.train.batch.to_string()),
            ("lr", self.train.lr.to_string()),
            ("weight_decay", self.train.weight_decay.to_string()),
            ("epochs", self.train.epochs.to_string()),
            ("optimizer", optimizer.to_string()),
            ("clip", self.train.clip.to_string()),
            ("val_fraction", self.train.val_fraction.to_string()),
            ("grid", grid.join(",")),
            ("mc_samples", self.uncertainty.samples.to_string()),
            ("warmup", self.zero_shot_warmup.to_string()),
            ("seed", self.model_seed.to_string()),
        ] {
            kv.set(k, v);
        }
        kv
    }

    /// Resolved configuration as sorted key/value pairs.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let kv = self.to_kv();
        kv.keys()
            .map(|k| (k.to_string(), kv.get(k).unwrap_or_default().to_string()))
            .collect()
    }
}

/// Feature series for `series`, normalized with statistics of its first
/// `fit_len` values. The decomposition covers the whole of `series`.
pub fn prepare_series(
    series: &RawSeries,
    fit_len: usize,
    layout: ChannelLayout,
    dcfg: &DecompositionConfig,
) -> Result<FeatureSeries> {
    if fit_len == 0 || fit_len > series.len() {
        return Err(Error::InvalidArgument(format!(
            "series `{}`: normalizer window {fit_len} outside 1..={}",
            series.id,
            series.len()
        )));
    }
    let normalizer = Normalizer::fit(&series.values[..fit_len])?;
    match layout {
        ChannelLayout::Raw => {
            FeatureSeries::raw(&series.id, &series.values, &series.events, normalizer)
        }
        ChannelLayout::Star => {
            let parts = decompose(&series.values, &series.events, series.cycle, dcfg).map_err(
                |e| match e {
                    Error::SeriesTooShort { len, need, .. } => Error::SeriesTooShort {
                        series: series.id.clone(),
                        len,
                        need,
                    },
                    other => other,
                },
            )?;
            FeatureSeries::star(
                &series.id,
                &series.values,
                &series.events,
                &parts,
                normalizer,
            )
        }
    }
}

/// A feature series plus the first window end to forecast from.
#[derive(Debug, Clone)]
pub struct EvalTarget {
    pub features: FeatureSeries,
    pub first_end: usize,
}

/// A forecast at one step with its sampling details.
#[derive(Debug, Clone)]
pub struct StepForecast {
    pub record: StepRecord,
    pub distribution: ForecastDistribution,
}

/// Stable per-series seed component.
fn id_hash(id: &str) -> u64 {
    id.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Probabilistic forecasts for every window ending in
/// `first_end..=T-2`. With `static_p` the grid search is replaced by that
/// single probability.
pub fn forecast_series(
    model: &AAModel,
    target: &EvalTarget,
    unc: &UncertaintyConfig,
    static_p: Option<f64>,
) -> Result<Vec<StepForecast>> {
    let fs = &target.features;
    let tau = model.config().tau;
    if fs.len() < tau + 1 {
        return Err(Error::WindowTooLong {
            tau,
            len: fs.len(),
            need: tau + 1,
        });
    }
    let bank = if model.config().attention {
        model.build_bank(fs)?
    } else {
        HiddenBank::new()
    };
    let master = rng::derive_seed(unc.seed, &[id_hash(&fs.id)]);
    let grid = match static_p {
        Some(p) => vec![p],
        None => unc.grid.clone(),
    };
    let first = target.first_end.max(tau - 1);
    (first..fs.len() - 1)
        .map(|end| {
            let w = window_at(fs, tau, end)?;
            let f = WindowForecaster::new(model, &w, &bank)?;
            let d = dynamic_optimize(&f, &grid, unc.samples, master, end as u64)?;
            let record = StepRecord {
                series: fs.id.to_string(),
                t: end + 1,
                observed: w.label,
                mean: d.mean,
                sd: d.sd,
                p_star: d.p_star,
                crps: crps(&d.samples, w.label)?,
                q05: d.quantile(0.05),
                q50: d.quantile(0.5),
                q95: d.quantile(0.95),
                critical: fs.critical[end + 1],
            };
            Ok(StepForecast {
                record,
                distribution: d,
            })
        })
        .collect()
}

/// Runs [`forecast_series`] over all targets (in parallel across series)
/// and aggregates the report.
pub fn evaluate(
    model: &AAModel,
    targets: &[EvalTarget],
    protocol: Protocol,
    method: &str,
    unc: &UncertaintyConfig,
    static_p: Option<f64>,
    config: BTreeMap<String, String>,
) -> Result<EvalReport> {
    if targets.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let per_series = targets
        .par_iter()
        .map(|t| forecast_series(model, t, unc, static_p))
        .collect::<Result<Vec<_>>>()?;
    let steps = per_series.into_iter().flatten().map(|f| f.record).collect();
    EvalReport::from_steps(protocol, method, model.config().tau, steps, config)
}

/// Training features: each series cut to its first `train_len(T)` points
/// and decomposed on its own.
pub fn training_features(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Vec<FeatureSeries>> {
    dataset
        .series
        .par_iter()
        .map(|s| {
            let seg = s.segment(0..train_len(s.len()));
            prepare_series(&seg, seg.len(), cfg.model.layout, &cfg.decomposition)
        })
        .collect()
}

/// Test targets: the full series (normalized on its training part) with
/// forecasts for every index in the test part.
pub fn test_targets(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Vec<EvalTarget>> {
    dataset
        .series
        .par_iter()
        .map(|s| {
            let n = train_len(s.len());
            Ok(EvalTarget {
                features: prepare_series(s, n, cfg.model.layout, &cfg.decomposition)?,
                first_end: n - 1,
            })
        })
        .collect()
}

/// Whole series as training data, normalized on themselves.
fn whole_series_features(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Vec<FeatureSeries>> {
    dataset
        .series
        .par_iter()
        .map(|s| prepare_series(s, s.len(), cfg.model.layout, &cfg.decomposition))
        .collect()
}

pub fn train_model(features: &[FeatureSeries], cfg: &PipelineConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let model = AAModel::new(cfg.model, cfg.model_seed)?;
    train(model, features, &cfg.train)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Trains on the older 80% of every series and scores the newer 20%.
pub fn run_80_20(dataset: &Dataset, cfg: &PipelineConfig, ablation: Ablation) -> Result<RunOutput> {
    let cfg = cfg.for_ablation(ablation);
    let outcome = train_model(&training_features(dataset, &cfg)?, &cfg)?;
    let static_p = (ablation == Ablation::NoUncertainty).then_some(cfg.model.static_dropout);
    let report = evaluate(
        &outcome.model,
        &test_targets(dataset, &cfg)?,
        Protocol::EightyTwenty,
        ablation.method(),
        &cfg.uncertainty,
        static_p,
        cfg.echo(),
    )?;
    Ok(RunOutput { outcome, report })
}

/// Full model and the three ablated variants on the 80-20 protocol. The
/// static-dropout variant reuses the full model's parameters.
pub fn run_ablation(dataset: &Dataset, cfg: &PipelineConfig) -> Result<Vec<EvalReport>> {
    let full_cfg = cfg.for_ablation(Ablation::None);
    let full = train_model(&training_features(dataset, &full_cfg)?, &full_cfg)?;
    let full_targets = test_targets(dataset, &full_cfg)?;
    let mut reports = Vec::with_capacity(4);
    for ablation in Ablation::ALL {
        let (model, targets, c) = match ablation {
            Ablation::None | Ablation::NoUncertainty => {
                (full.model.clone(), full_targets.clone(), full_cfg.clone())
            }
            _ => {
                let c = cfg.for_ablation(ablation);
                let out = train_model(&training_features(dataset, &c)?, &c)?;
                (out.model, test_targets(dataset, &c)?, c)
            }
        };
        let static_p = (ablation == Ablation::NoUncertainty).then_some(c.model.static_dropout);
        reports.push(evaluate(
            &model,
            &targets,
            Protocol::Ablation,
            ablation.method(),
            &c.uncertainty,
            static_p,
            c.echo(),
        )?);
    }
    Ok(reports)
}

/// Errors when any id appears in both datasets.
pub fn check_disjoint(train: &Dataset, unseen: &Dataset) -> Result<()> {
    let overlap: Vec<String> = unseen
        .ids()
        .filter(|id| train.get(id).is_some())
        .map(str::to_string)
        .collect();
    if overlap.is_empty() {
        Ok(())
    } else {
        Err(Error::SeriesOverlap(overlap))
    }
}

/// Zero-shot targets: each unseen series normalized on itself, scored from
/// `warmup` onwards (or from `tau` when that is later).
fn unseen_targets(unseen: &Dataset, cfg: &PipelineConfig) -> Result<Vec<EvalTarget>> {
    let tau = cfg.model.tau;
    let first_target = cfg.zero_shot_warmup.max(tau);
    unseen
        .series
        .par_iter()
        .map(|s| {
            if s.len() < first_target + 1 {
                return Err(Error::WindowTooLong {
                    tau,
                    len: s.len(),
                    need: first_target + 1,
                });
            }
            Ok(EvalTarget {
                features: prepare_series(s, s.len(), cfg.model.layout, &cfg.decomposition)?,
                first_end: first_target - 1,
            })
        })
        .collect()
}

/// Trains on `train` (whole series) and scores forecasts on `unseen`,
/// whose ids must not appear in `train`, once per window length.
pub fn run_zero_shot(
    train_set: &Dataset,
    unseen: &Dataset,
    cfg: &PipelineConfig,
    taus: &[usize],
) -> Result<Vec<RunOutput>> {
    check_disjoint(train_set, unseen)?;
    if unseen.is_empty() {
        return Err(Error::InvalidArgument("empty unseen set".into()));
    }
    taus.iter()
        .map(|&tau| {
            let c = cfg.clone().with_tau(tau);
            let outcome = train_model(&whole_series_features(train_set, &c)?, &c)?;
            let report = evaluate(
                &outcome.model,
                &unseen_targets(unseen, &c)?,
                Protocol::ZeroShot,
                Ablation::None.method(),
                &c.uncertainty,
                None,
                c.echo(),
            )?;
            Ok(RunOutput { outcome, report })
        })
        .collect()
}

/// One point forecast per window of an unseen series, in original units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointForecast {
    pub t: usize,
    pub value: f64,
}

/// Deterministic (dropout-free) forecasts for every labelled window of a
/// series the model never saw. The hidden bank comes from the series' own
/// past only.
pub fn zero_shot_forecast(
    model: &AAModel,
    unseen: &RawSeries,
    dcfg: &DecompositionConfig,
) -> Result<Vec<PointForecast>> {
    let tau = model.config().tau;
    if unseen.len() < tau + 1 {
        return Err(Error::WindowTooLong {
            tau,
            len: unseen.len(),
            need: tau + 1,
        });
    }
    let fs = prepare_series(unseen, unseen.len(), model.config().layout, dcfg)?;
    let bank = model.build_bank(&fs)?;
    let ones = vec![1.0; model.config().head_width()];
    (tau - 1..fs.len() - 1)
        .map(|end| {
            let w = window_at(&fs, tau, end)?;
            let z = model.predict(&w, &bank, &ones)?;
            Ok(PointForecast {
                t: end + 1,
                value: fs.normalizer.denormalize(z),
            })
        })
        .collect()
}
