use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_aa-forecast"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn aa-forecast")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref())
        .unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small config shared by the tests: a few short series, tiny model.
fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.conf");
    std::fs::write(
        &path,
        format!(
            "# synthetic data\nT = 96\ncycle = 12\ncount = 3\nnoise = 0.03\n\
             anomalies = 40:2.5, 70:0.4\nevents = 39:1\n\
             data = data/series.csv\n\
             hidden = 4\ntau = 6\nepochs = 3\nbatch = 16\nlr = 0.01\noptimizer = adam\n\
             mc_samples = 8\ngrid = 0.1, 0.3\n{extra}"
        ),
    )
    .unwrap();
    path
}

#[test]
fn full_artifact_chain() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let conf = write_config(root, "");
    let c = s(&conf);
    let out = |name: &str| root.join(name);

    ok(&[
        "synth",
        "--config",
        c,
        "--seed",
        "3",
        "--out",
        s(&out("data")),
    ]);
    let series = read(out("data/series.csv"));
    assert!(series.starts_with("series_id,timestamp,value,event_level\n"));
    assert_eq!(series.lines().count(), 1 + 3 * 96);

    ok(&["decompose", "--config", c, "--out", s(&out("parts"))]);
    let parts = read(out("parts/components.csv"));
    assert!(parts
        .starts_with("series_id,t,value,event,seasonal,trend,anomaly,residual,score,critical\n"));
    let meta: serde_json::Value = serde_json::from_str(&read(out("parts/meta.json"))).unwrap();
    assert_eq!(meta.as_array().unwrap().len(), 3);

    ok(&[
        "train",
        "--config",
        c,
        "--seed",
        "1",
        "--out",
        s(&out("model")),
    ]);
    let trace = read(out("model/loss_trace.csv"));
    assert!(trace.starts_with("epoch,train_loss,val_loss\n"));
    assert_eq!(trace.lines().count(), 1 + 3);
    assert!(read(out("model/config.resolved")).contains("hidden = 4\n"));

    let ck = out("model/checkpoint.json");
    ok(&[
        "forecast",
        "--config",
        c,
        "--checkpoint",
        s(&ck),
        "--out",
        s(&out("fc")),
    ]);
    let fc = read(out("fc/forecast.csv"));
    let mut lines = fc.lines();
    assert_eq!(
        lines.next().unwrap(),
        "series_id,t,mean,sd,p_star,q05,q50,q95"
    );
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    // the newer 20% of 96 points, minus the first index
    assert_eq!(rows.len(), 3 * (96 - 76));
    for r in &rows {
        assert!(r.iter().all(|v| v.is_finite()));
        assert!(r[3] == 0.1 || r[3] == 0.3, "p* {}", r[3]);
        assert!(r[4] <= r[5] && r[5] <= r[6]);
        // denormalized to the data's level
        assert!(r[1] > 10.0, "mean {}", r[1]);
    }

    let eval = ok(&[
        "evaluate",
        "--config",
        c,
        "--checkpoint",
        s(&ck),
        "--out",
        s(&out("eval")),
    ]);
    assert!(String::from_utf8_lossy(&eval.stdout).contains("80-20 full tau=6"));
    let report: serde_json::Value = serde_json::from_str(&read(out("eval/report.json"))).unwrap();
    assert_eq!(report[0]["protocol"], "80-20");
    assert!(report[0]["aggregate"]["crps"].as_f64().unwrap().is_finite());
    assert!(read(out("eval/table.csv")).starts_with("method,metric,"));
    assert!(read(out("eval/steps.csv")).lines().count() > 1);

    // no staging directories left behind
    for entry in std::fs::read_dir(root).unwrap() {
        let name = entry.unwrap().file_name();
        assert!(!name.to_string_lossy().contains("staging"), "{name:?}");
    }
}

#[test]
fn forecast_without_checkpoint_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "");
    let missing = dir.path().join("nowhere/checkpoint.json");
    let out = run(&[
        "forecast",
        "--config",
        s(&conf),
        "--checkpoint",
        s(&missing),
        "--out",
        s(&dir.path().join("fc")),
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere/checkpoint.json"), "{err}");
    assert!(!dir.path().join("fc").exists());
}

#[test]
fn failure_leaves_existing_output_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_config(dir.path(), "");
    let target = dir.path().join("parts");
    std::fs::create_dir(&target).unwrap();
    std::fs::write(target.join("keep.txt"), "previous run").unwrap();
    // data/series.csv was never generated
    let out = run(&["decompose", "--config", s(&conf), "--out", s(&target)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("series.csv"));
    assert_eq!(read(target.join("keep.txt")), "previous run");
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let conf = write_config(root, "");
    let c = s(&conf);
    ok(&["synth", "--config", c, "--out", s(&root.join("data"))]);
    for run in ["a", "b"] {
        let m = root.join(format!("model-{run}"));
        ok(&["train", "--config", c, "--seed", "5", "--out", s(&m)]);
        let ck = m.join("checkpoint.json");
        ok(&[
            "forecast",
            "--config",
            c,
            "--checkpoint",
            s(&ck),
            "--out",
            s(&root.join(format!("fc-{run}"))),
        ]);
    }
    for file in [
        "model-{}/checkpoint.json",
        "model-{}/loss_trace.csv",
        "fc-{}/forecast.csv",
    ] {
        let a = std::fs::read(root.join(file.replace("{}", "a"))).unwrap();
        let b = std::fs::read(root.join(file.replace("{}", "b"))).unwrap();
        assert!(a == b, "{file} differs between runs");
    }
    // a worker cap does not change the numbers
    let capped = root.join("model-capped");
    let out = bin()
        .env("AA_FORECAST_THREADS", "1")
        .args(["train", "--config", c, "--seed", "5", "--out", s(&capped)])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(
        std::fs::read(capped.join("checkpoint.json")).unwrap(),
        std::fs::read(root.join("model-a/checkpoint.json")).unwrap()
    );
}

#[test]
fn electricity_preset_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let conf = root.join("elec.conf");
    std::fs::write(
        &conf,
        "preset = electricity\nT = 60\ncount = 2\ndata = data/series.csv\n\
         hidden = 2\ntau = 3\nepochs = 1\n",
    )
    .unwrap();
    let c = s(&conf);
    ok(&["synth", "--config", c, "--out", s(&root.join("data"))]);
    ok(&["train", "--config", c, "--out", s(&root.join("model"))]);
    let echo = read(root.join("model/config.resolved"));
    for line in [
        "batch = 64",
        "lr = 0.00005",
        "weight_decay = 0.0001",
        "static_dropout = 0.6",
    ] {
        assert!(
            echo.contains(&format!("{line}\n")),
            "missing `{line}` in\n{echo}"
        );
    }
}

#[test]
fn zero_shot_and_ablation_protocols() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let conf = write_config(
        root,
        "unseen = unseen/series.csv\ntaus = 3, 6\nepochs = 1\nwarmup = 12\n",
    );
    let c = s(&conf);
    ok(&["synth", "--config", c, "--out", s(&root.join("data"))]);
    // same scenario under different ids
    let unseen_conf = root.join("unseen.conf");
    std::fs::write(&unseen_conf, "include = run.conf\nid = fresh\n").unwrap();
    ok(&[
        "synth",
        "--config",
        s(&unseen_conf),
        "--seed",
        "9",
        "--out",
        s(&root.join("unseen")),
    ]);

    let zs = root.join("zs.conf");
    std::fs::write(&zs, "include = run.conf\nprotocol = zero-shot\n").unwrap();
    ok(&["evaluate", "--config", s(&zs), "--out", s(&root.join("zs"))]);
    let report: serde_json::Value =
        serde_json::from_str(&read(root.join("zs/report.json"))).unwrap();
    let taus: Vec<u64> = report
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["tau"].as_u64().unwrap())
        .collect();
    assert_eq!(taus, vec![3, 6]);
    assert_eq!(report[0]["protocol"], "zero-shot");

    // zero-shot against the training ids themselves is refused
    let overlap = root.join("overlap.conf");
    std::fs::write(
        &overlap,
        "include = run.conf\nprotocol = zero-shot\nunseen = data/series.csv\n",
    )
    .unwrap();
    assert!(!run(&[
        "evaluate",
        "--config",
        s(&overlap),
        "--out",
        s(&root.join("bad"))
    ])
    .status
    .success());

    let ab = root.join("ab.conf");
    std::fs::write(&ab, "include = run.conf\nprotocol = ablation\nepochs = 1\n").unwrap();
    ok(&["evaluate", "--config", s(&ab), "--out", s(&root.join("ab"))]);
    let report: serde_json::Value =
        serde_json::from_str(&read(root.join("ab/report.json"))).unwrap();
    let methods: Vec<&str> = report
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["method"].as_str().unwrap())
        .collect();
    assert_eq!(methods.len(), 4);
    assert!(methods.contains(&"w/o anomaly attention"));
}

#[test]
fn bad_flags_are_rejected() {
    let out = run(&["evaluate", "--ablation", "sideways", "--out", "x"]);
    assert!(!out.status.success());
    let out = run(&[
        "train",
        "--out",
        "/tmp/never-written",
        "--grid",
        "0.2,1.5",
        "--data",
        "/nonexistent.csv",
    ]);
    assert!(!out.status.success());
}
