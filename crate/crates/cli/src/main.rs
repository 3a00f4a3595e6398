//! `aa-forecast`: synthesize, decompose, train, forecast and evaluate from the
//! command line. Every command writes into a staging directory that is renamed
//! to `--out` only after all files are complete.

mod output;

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use aa_forecast::decompose::decompose;
use aa_forecast::kv::KvConfig;
use aa_forecast::metrics::{write_table, EvalReport, Protocol};
use aa_forecast::model::Checkpoint;
use aa_forecast::pipeline::{
    evaluate, forecast_series, run_80_20, run_ablation, run_zero_shot, test_targets, train_model,
    training_features, Ablation, PipelineConfig,
};
use aa_forecast::rng::derive_seed;
use aa_forecast::series::{load_csv, write_csv, CsvSchema, Dataset, SplitTag};
use aa_forecast::synth::{synth_generate, ScenarioConfig};

use output::Staging;

#[derive(Parser)]
#[command(
    name = "aa-forecast",
    version,
    about = "Anomaly-aware probabilistic forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic series into `series.csv`.
    Synth(Common),
    /// Split every series into seasonal, trend, anomaly and residual parts.
    Decompose(Common),
    /// Train on the older 80% of every series and save a checkpoint.
    Train(Common),
    /// Probabilistic forecasts for the newer 20% from a saved checkpoint.
    Forecast(Common),
    /// Score a protocol (80-20, ablation or zero-shot) and write a report.
    Evaluate(Common),
}

#[derive(Args)]
struct Common {
    /// Key-value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV; overrides the `data` key.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; replaced as a whole on success.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    tau: Option<usize>,
    /// Comma-separated dropout probabilities.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long)]
    mc_samples: Option<usize>,
    #[arg(long, default_value = "none")]
    ablation: Ablation,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

/// Configuration file plus command-line overrides.
struct Resolved {
    kv: KvConfig,
    base: PathBuf,
}

impl Resolved {
    fn new(c: &Common) -> Result<Self> {
        let (mut kv, base) = match &c.config {
            Some(path) => (
                KvConfig::load(path).with_context(|| format!("config {}", path.display()))?,
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ),
            None => (KvConfig::new(), PathBuf::new()),
        };
        if let Some(seed) = c.seed {
            kv.set("seed", seed.to_string());
        }
        if let Some(tau) = c.tau {
            kv.set("tau", tau.to_string());
        }
        if let Some(grid) = &c.grid {
            let text: Vec<String> = grid.iter().map(f64::to_string).collect();
            kv.set("grid", text.join(", "));
        }
        if let Some(m) = c.mc_samples {
            kv.set("mc_samples", m.to_string());
        }
        if let Some(data) = &c.data {
            let abs = std::path::absolute(data)?;
            kv.set("data", abs.display().to_string());
        }
        if let Some(ck) = &c.checkpoint {
            let abs = std::path::absolute(ck)?;
            kv.set("checkpoint", abs.display().to_string());
        }
        kv.set("ablation", c.ablation.to_string());
        Ok(Self { kv, base })
    }

    /// Path-valued key, resolved against the configuration file's directory.
    fn path(&self, key: &str) -> Option<PathBuf> {
        self.kv.get(key).map(|p| self.base.join(p))
    }

    fn dataset(&self, key: &str) -> Result<Dataset> {
        let path = self
            .path(key)
            .ok_or_else(|| anyhow!("no `{key}` path given (use --data or the `{key}` key)"))?;
        let cycle = self.kv.parse_or("cycle", 12usize)?;
        load_csv(&path, &CsvSchema::with_cycle(cycle))
            .with_context(|| format!("loading {}", path.display()))
    }

    fn pipeline(&self, ablation: Ablation) -> Result<PipelineConfig> {
        Ok(PipelineConfig::from_kv(&self.kv)
            .context("pipeline configuration")?
            .for_ablation(ablation))
    }

    /// The input keys followed by every pipeline key with its resolved value.
    fn echo(&self, pipeline: Option<&PipelineConfig>) -> String {
        let mut merged = self.kv.clone();
        if let Some(p) = pipeline {
            let resolved = p.to_kv();
            for k in resolved.keys() {
                merged.set(k, resolved.get(k).unwrap_or_default());
            }
        }
        merged.render()
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = init_threads().and_then(|_| run(cli.command)) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("AA_FORECAST_THREADS") {
        let n: usize =
            v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
                anyhow!("AA_FORECAST_THREADS must be a positive integer, got `{v}`")
            })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()?;
    }
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(c) => synth(&c),
        Command::Decompose(c) => decompose_cmd(&c),
        Command::Train(c) => train(&c),
        Command::Forecast(c) => forecast(&c),
        Command::Evaluate(c) => evaluate_cmd(&c),
    }
}

fn synth(c: &Common) -> Result<()> {
    let r = Resolved::new(c)?;
    let scenario = ScenarioConfig::from_kv(&r.kv).context("synth")?;
    let count = r.kv.parse_or("count", 1usize)?;
    let seed = r.kv.parse_or("seed", 0u64)?;
    let series = (0..count)
        .map(|k| {
            let mut s = scenario.clone();
            if count > 1 {
                s.id = format!("{}-{k:03}", scenario.id);
            }
            synth_generate(&s, derive_seed(seed, &[k as u64]))
        })
        .collect::<aa_forecast::Result<Vec<_>>>()
        .context("synth")?;
    let dataset = Dataset::new(series, SplitTag::Train)?;

    let stage = Staging::new(&c.out)?;
    write_csv(&dataset, stage.create("series.csv")?)?;
    stage.write("config.resolved", r.echo(None))?;
    stage.commit()
}

fn decompose_cmd(c: &Common) -> Result<()> {
    let r = Resolved::new(c)?;
    let dataset = r.dataset("data")?;
    let cfg = r.pipeline(Ablation::None)?;

    let stage = Staging::new(&c.out)?;
    let mut w = csv::Writer::from_writer(stage.create("components.csv")?);
    w.write_record([
        "series_id",
        "t",
        "value",
        "event",
        "seasonal",
        "trend",
        "anomaly",
        "residual",
        "score",
        "critical",
    ])?;
    let mut meta = Vec::new();
    for s in &dataset.series {
        let d = decompose(&s.values, &s.events, s.cycle, &cfg.decomposition)
            .with_context(|| format!("decompose: series `{}`", s.id))?;
        for i in 0..s.len() {
            let critical = s.events[i] != 0.0 || d.is_anomalous(i);
            w.write_record([
                s.id.clone(),
                s.timestamps[i].to_string(),
                s.values[i].to_string(),
                s.events[i].to_string(),
                d.seasonal[i].to_string(),
                d.trend[i].to_string(),
                d.anomaly[i].to_string(),
                d.residual[i].to_string(),
                d.scores[i].to_string(),
                u8::from(critical).to_string(),
            ])?;
        }
        meta.push(json!({
            "series_id": s.id,
            "len": s.len(),
            "cycle": d.cycle,
            "span": d.span,
            "offset": d.offset,
            "score_threshold": d.cutoff,
            "anomalies": (0..s.len()).filter(|&i| d.is_anomalous(i)).count(),
        }));
    }
    w.flush()?;
    drop(w);
    stage.write("meta.json", serde_json::to_string_pretty(&meta)? + "\n")?;
    stage.write("config.resolved", r.echo(Some(&cfg)))?;
    stage.commit()
}

fn train(c: &Common) -> Result<()> {
    let r = Resolved::new(c)?;
    let dataset = r.dataset("data")?;
    let cfg = r.pipeline(c.ablation)?;
    let features = training_features(&dataset, &cfg).context("train: features")?;
    let outcome = train_model(&features, &cfg).context("train")?;

    let stage = Staging::new(&c.out)?;
    Checkpoint::from_model(&outcome.model, cfg.decomposition, Some(cfg.train))
        .save(stage.path("checkpoint.json"))?;
    let mut w = csv::Writer::from_writer(stage.create("loss_trace.csv")?);
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in &outcome.trace {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            e.val_loss.to_string(),
        ])?;
    }
    w.flush()?;
    drop(w);
    let summary = json!({
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "series": features.len(),
    });
    stage.write("train.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    stage.write("config.resolved", r.echo(Some(&cfg)))?;
    stage.commit()
}

fn load_checkpoint(r: &Resolved) -> Result<Checkpoint> {
    let path = r
        .path("checkpoint")
        .ok_or_else(|| anyhow!("no checkpoint given (use --checkpoint)"))?;
    if !path.is_file() {
        bail!("checkpoint file not found: {}", path.display());
    }
    Checkpoint::load(&path).with_context(|| format!("checkpoint {}", path.display()))
}

/// Pipeline settings for a saved model: architecture and decomposition come
/// from the checkpoint, sampling settings from the command line.
fn checkpoint_pipeline(r: &Resolved, ck: &Checkpoint) -> Result<PipelineConfig> {
    let mut cfg = r.pipeline(Ablation::None)?;
    if r.kv.contains("tau") && cfg.model.tau != ck.model.tau {
        bail!(
            "checkpoint was trained with tau {}, requested tau {}",
            ck.model.tau,
            cfg.model.tau
        );
    }
    cfg.model = ck.model;
    cfg.decomposition = ck.decomposition;
    Ok(cfg)
}

fn forecast(c: &Common) -> Result<()> {
    let r = Resolved::new(c)?;
    let ck = load_checkpoint(&r)?;
    let model = ck.to_model()?;
    let cfg = checkpoint_pipeline(&r, &ck)?;
    let dataset = r.dataset("data")?;
    let static_p = (c.ablation == Ablation::NoUncertainty).then_some(cfg.model.static_dropout);

    let stage = Staging::new(&c.out)?;
    let mut w = csv::Writer::from_writer(stage.create("forecast.csv")?);
    w.write_record([
        "series_id",
        "t",
        "mean",
        "sd",
        "p_star",
        "q05",
        "q50",
        "q95",
    ])?;
    for target in test_targets(&dataset, &cfg).context("forecast: features")? {
        let fs = &target.features;
        let norm = fs.normalizer;
        let steps = forecast_series(&model, &target, &cfg.uncertainty, static_p)
            .with_context(|| format!("forecast: series `{}`", fs.id))?;
        for s in steps {
            let rec = s.record;
            w.write_record([
                rec.series.clone(),
                rec.t.to_string(),
                norm.denormalize(rec.mean).to_string(),
                (rec.sd * norm.scale).to_string(),
                rec.p_star.to_string(),
                norm.denormalize(rec.q05).to_string(),
                norm.denormalize(rec.q50).to_string(),
                norm.denormalize(rec.q95).to_string(),
            ])?;
        }
    }
    w.flush()?;
    drop(w);
    stage.write("config.resolved", r.echo(Some(&cfg)))?;
    stage.commit()
}

fn evaluate_cmd(c: &Common) -> Result<()> {
    let r = Resolved::new(c)?;
    let protocol: Protocol = r.kv.parse_or("protocol", Protocol::EightyTwenty)?;
    let dataset = r.dataset("data")?;
    let (reports, cfg) = match protocol {
        Protocol::EightyTwenty => {
            if r.kv.contains("checkpoint") {
                let ck = load_checkpoint(&r)?;
                let cfg = checkpoint_pipeline(&r, &ck)?;
                let static_p =
                    (c.ablation == Ablation::NoUncertainty).then_some(cfg.model.static_dropout);
                let report = evaluate(
                    &ck.to_model()?,
                    &test_targets(&dataset, &cfg)?,
                    protocol,
                    c.ablation.method(),
                    &cfg.uncertainty,
                    static_p,
                    cfg.echo(),
                )
                .context("evaluate")?;
                (vec![report], cfg)
            } else {
                let cfg = r.pipeline(Ablation::None)?;
                let run = run_80_20(&dataset, &cfg, c.ablation).context("evaluate")?;
                (vec![run.report], cfg.for_ablation(c.ablation))
            }
        }
        Protocol::Ablation => {
            let cfg = r.pipeline(Ablation::None)?;
            (
                run_ablation(&dataset, &cfg).context("evaluate: ablation")?,
                cfg,
            )
        }
        Protocol::ZeroShot => {
            let cfg = r.pipeline(c.ablation)?;
            let unseen = r.dataset("unseen")?.with_split(SplitTag::Unseen);
            let taus =
                r.kv.parse_list("taus")?
                    .unwrap_or_else(|| vec![cfg.model.tau]);
            let runs =
                run_zero_shot(&dataset, &unseen, &cfg, &taus).context("evaluate: zero-shot")?;
            (runs.into_iter().map(|run| run.report).collect(), cfg)
        }
    };

    let stage = Staging::new(&c.out)?;
    stage.write(
        "report.json",
        serde_json::to_string_pretty(&reports)? + "\n",
    )?;
    write_table(&reports, stage.path("table.csv"))?;
    write_steps(&reports, stage.create("steps.csv")?)?;
    stage.write("config.resolved", r.echo(Some(&cfg)))?;
    stage.commit()?;
    print_summary(&reports, std::io::stdout().lock())
}

/// Per-step records of every report, for plotting.
fn write_steps(reports: &[EvalReport], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "tau",
        "series_id",
        "t",
        "observed",
        "mean",
        "sd",
        "p_star",
        "crps",
        "q05",
        "q50",
        "q95",
        "critical",
    ])?;
    for rep in reports {
        for s in &rep.steps {
            w.write_record([
                rep.method.clone(),
                rep.tau.to_string(),
                s.series.clone(),
                s.t.to_string(),
                s.observed.to_string(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.p_star.to_string(),
                s.crps.to_string(),
                s.q05.to_string(),
                s.q50.to_string(),
                s.q95.to_string(),
                u8::from(s.critical).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_summary(reports: &[EvalReport], mut out: impl Write) -> Result<()> {
    for rep in reports {
        let a = &rep.aggregate;
        writeln!(
            out,
            "{} {} tau={}: crps {:.4} rmse {:.4} sd {:.4} over {} steps",
            rep.protocol, rep.method, rep.tau, a.crps, a.rmse, a.sd, a.steps
        )?;
    }
    Ok(())
}
