use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_camforest"));
    c.env_remove("CAMFOREST_DATA_DIR");
    c
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn run_ok(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn small_config(out: &Path, data: &Path) -> String {
    format!(
        r#"{{
  "version": 1,
  "dataset": {{ "name": "wdbc", "data_dir": {data:?} }},
  "model": {{ "kind": "sdt", "depth": 3 }},
  "training": {{ "epochs": 3, "learning_rate": 0.05, "beta": 10.0, "batch_size": 32, "seed": 0 }},
  "noise": {{ "kind": "uniform", "magnitudes": [0.0, 0.1], "trials": 4 }},
  "experiments": {{ "attack_trials": 2, "plan_width": 4 }},
  "seed": 5,
  "output": {out:?}
}}"#
    )
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, small_config(&out, &data_dir())).unwrap();
    run_ok(bin().arg("run").arg(&cfg));
    for f in ["model.json", "array.csv", "array.json", "report.csv", "manifest.json", "config.json", "plan.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let purposes: Vec<&str> = manifest["seeds"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["purpose"].as_str().unwrap())
        .collect();
    assert_eq!(purposes, ["split", "tree", "sdt_training", "variation", "attack"]);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 4);
}

#[test]
fn identical_configs_give_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let cfg = dir.path().join(format!("{name}.json"));
        fs::write(&cfg, small_config(&out, &data_dir())).unwrap();
        run_ok(bin().arg("run").arg(&cfg));
        reports.push((
            fs::read(out.join("report.csv")).unwrap(),
            fs::read(out.join("model.json")).unwrap(),
            fs::read(out.join("array.csv")).unwrap(),
        ));
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn missing_dataset_exits_two_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, small_config(&out, &dir.path().join("nowhere"))).unwrap();
    let res = bin().arg("run").arg(&cfg).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn schema_violation_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"version": 1, "dataset": {"name": "wdbc"}, "output": "x"}"#).unwrap();
    assert_eq!(bin().arg("run").arg(&cfg).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("run").arg(dir.path().join("absent.json")).output().unwrap().status.code(), Some(2));
    assert_eq!(bin().arg("frobnicate").output().unwrap().status.code(), Some(2));
}

#[test]
fn data_dir_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("dt.json");
    run_ok(
        bin()
            .env("CAMFOREST_DATA_DIR", data_dir())
            .args(["train", "--dataset", "iris", "--depth", "2", "--out"])
            .arg(&model),
    );
    assert!(model.exists());
}

#[test]
fn subcommands_chain() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    let data = data_dir();
    run_ok(bin().args(["train", "--depth", "3", "--data-dir"]).arg(&data).arg("--out").arg(p("dt.json")));
    run_ok(
        bin()
            .args(["soften", "--epochs", "3", "--lr", "0.1", "--gain-k", "15", "--behavior", "1,0", "--model"])
            .arg(p("dt.json"))
            .arg("--out")
            .arg(p("sdt.json")),
    );
    let sdt: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("sdt.json")).unwrap()).unwrap();
    assert_eq!(sdt["model"]["behavior"]["k"].as_f64(), Some(15.0));
    run_ok(bin().arg("map").arg("--model").arg(p("sdt.json")).arg("--out").arg(p("array.csv")));
    let csv = fs::read_to_string(p("array.csv")).unwrap();
    assert!(csv.starts_with("row,label,"));
    assert!(p("array.json").exists());

    let mc = run_ok(bin().args(["mc", "--noise", "gaussian:0.05", "--trials", "3", "--model"]).arg(p("sdt.json")));
    let text = String::from_utf8(mc.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(",gaussian,0.05,3,"));

    run_ok(
        bin()
            .args(["sweep", "--trials", "2", "--magnitudes", "0,0.1", "--model"])
            .arg(p("dt.json"))
            .arg("--model")
            .arg(p("sdt.json"))
            .arg("--out-dir")
            .arg(p("sweep")),
    );
    assert!(p("sweep/sweep.csv").exists());
    assert!(p("sweep/sdt_wdbc_uniform_0.1.csv").exists());

    for level in ["software", "cam"] {
        run_ok(bin().args(["attack", "--trials", "2", "--level", level, "--model"]).arg(p("sdt.json")));
    }
    run_ok(bin().args(["plan", "--width", "2", "--model"]).arg(p("sdt.json")).arg("--out").arg(p("plan.json")));
    run_ok(
        bin()
            .args(["cost", "--reference", "--plan"])
            .arg(p("plan.json"))
            .arg("--save-calibration")
            .arg(p("cal.json"))
            .arg("--out")
            .arg(p("cost.json")),
    );
    run_ok(bin().args(["cost", "--calibration"]).arg(p("cal.json")).arg("--plan").arg(p("plan.json")).arg("--out").arg(p("cost.csv")));
    assert!(fs::read_to_string(p("cost.csv")).unwrap().starts_with("label,latency_s"));
    let no_cal = bin().args(["cost", "--plan"]).arg(p("plan.json")).output().unwrap();
    assert_eq!(no_cal.status.code(), Some(2));

    run_ok(
        bin()
            .args(["surface", "--resolution", "20", "--features", "mean_concave_points,worst_area", "--model"])
            .arg(p("sdt.json"))
            .arg("--out")
            .arg(p("surface.csv")),
    );
    assert_eq!(fs::read_to_string(p("surface.csv")).unwrap().lines().count(), 401);
    let bad = bin()
        .args(["surface", "--features", "mean_concave_points,nope", "--model"])
        .arg(p("sdt.json"))
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn circuit_row_trace_and_sweep() {
    let row = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/reference_row.json");
    let trace = run_ok(bin().arg("circuit").arg("--row").arg(&row));
    let text = String::from_utf8(trace.stdout).unwrap();
    assert!(text.starts_with("t,v_ml\n"));
    let sweep = run_ok(bin().arg("circuit").arg("--row").arg(&row).args(["--sweep", "1", "--points", "11"]));
    let text = String::from_utf8(sweep.stdout).unwrap();
    let vals: Vec<f64> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(vals.len(), 11);
    // raising the input of a "<" cell can only discharge the line faster
    assert!(vals.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}
