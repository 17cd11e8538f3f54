use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "-m", "12", "-l", "4", "-L", "2", "--d-z", "4", "--d-h", "4", "-n", "5", "--epochs", "2", "--warmup-epochs", "2",
    "--batch-size", "32",
];

fn hyvae(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyvae"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = hyvae(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    hyvae(dir, args).status.code().unwrap()
}

fn series(dir: &Path) -> PathBuf {
    ok(dir, &["synth", "--kind", "trend_season", "--length", "200", "--out", "s.csv"]);
    dir.join("s.csv")
}

fn train(dir: &Path, seed: &str, out: &str) {
    let mut args = vec!["--seed", seed, "-q", "train", "--data", "s.csv", "--model-out", out];
    args.extend_from_slice(SMALL);
    ok(dir, &args);
}

fn data_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(String::from).collect()
}

#[test]
fn help_lists_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["train", "--help"]);
    for needle in ["[default: 10]", "[default: 4]", "[default: 32]", "[default: 50]", "[default: 0.01]"] {
        assert!(text.contains(needle), "missing {needle}");
    }
    assert_eq!(code(dir.path(), &["--help"]), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["train", "--data", "nowhere.csv", "-l", "60"]), 1);
    assert_eq!(code(dir.path(), &["train", "--bogus"]), 1);
    assert_eq!(code(dir.path(), &["train"]), 1);
    assert!(!dir.path().join("model.json").exists());
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(dir.path(), &["train", "--data", "nowhere.csv"]), 2);
    fs::write(dir.path().join("bad.csv"), "1\n2\nx\n").unwrap();
    assert_eq!(code(dir.path(), &["train", "--data", "bad.csv"]), 2);
    fs::write(dir.path().join("flat.csv"), "1\n".repeat(300)).unwrap();
    assert_eq!(code(dir.path(), &["train", "--data", "flat.csv"]), 2);
    fs::write(dir.path().join("m.json"), "{\"format_version\": 1, ").unwrap();
    series(dir.path());
    assert_eq!(code(dir.path(), &["forecast", "--model", "m.json", "--data", "s.csv"]), 2);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    series(d);
    train(d, "7", "a.json");
    train(d, "7", "b.json");
    train(d, "8", "c.json");
    let a = fs::read(d.join("a.json")).unwrap();
    assert_eq!(a, fs::read(d.join("b.json")).unwrap());
    assert_ne!(a, fs::read(d.join("c.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&fs::read(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 8);
    assert_eq!(report["result"]["report"]["epochs"].as_array().unwrap().len(), 2);
}

#[test]
fn forecast_rows_and_units() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    series(d);
    train(d, "0", "model.json");
    ok(d, &["-q", "forecast", "--model", "model.json", "--data", "s.csv", "--steps", "1", "--out", "one.csv"]);
    assert_eq!(data_rows(&d.join("one.csv")).len(), 1);
    ok(d, &["-q", "forecast", "--model", "model.json", "--data", "s.csv", "--steps", "5", "--out", "five.csv"]);
    assert_eq!(data_rows(&d.join("five.csv")).len(), 5);
    ok(d, &["-q", "forecast", "--model", "model.json", "--data", "s.csv", "--normalized", "--out", "norm.csv"]);
    assert_eq!(code(d, &["forecast", "--model", "model.json", "--data", "s.csv", "--steps", "6"]), 1);

    let model: serde_json::Value = serde_json::from_slice(&fs::read(d.join("model.json")).unwrap()).unwrap();
    let (lo, hi) = (
        model["normalization"]["min"].as_f64().unwrap(),
        model["normalization"]["max"].as_f64().unwrap(),
    );
    let value = |p: &str| data_rows(&d.join(p))[0].split(',').nth(1).unwrap().parse::<f64>().unwrap();
    let norm = value("norm.csv");
    assert!((value("one.csv") - (lo + norm * (hi - lo))).abs() < 1e-9);

    fs::write(d.join("short.csv"), "1\n2\n3\n").unwrap();
    assert_eq!(code(d, &["forecast", "--model", "model.json", "--data", "short.csv"]), 2);
}

#[test]
fn plot_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    series(d);
    train(d, "0", "model.json");
    for (mode, out) in [("mean", "a.csv"), ("sample", "b.csv")] {
        ok(d, &["-q", "forecast", "--model", "model.json", "--data", "s.csv", "--rolling", "--mode", mode, "--out", out]);
    }
    let rows = data_rows(&d.join("a.csv"));
    assert_eq!(rows.len(), 200 - 12);
    assert!(rows[0].starts_with("12,"));

    ok(d, &["-q", "plot", "--input", "a.csv", "--out", "one.svg"]);
    let one = fs::read_to_string(d.join("one.svg")).unwrap();
    assert_eq!(one.matches("<polyline").count(), 2);
    ok(d, &["-q", "plot", "--input", "a.csv", "--out", "again.svg"]);
    assert_eq!(one, fs::read_to_string(d.join("again.svg")).unwrap());

    ok(d, &["-q", "plot", "--input", "a.csv", "--input", "b.csv", "--label", "mean", "--label", "sample", "--out", "two.svg"]);
    assert_eq!(fs::read_to_string(d.join("two.svg")).unwrap().matches("<polyline").count(), 3);

    fs::write(d.join("empty.csv"), "").unwrap();
    fs::write(d.join("header.csv"), "step,prediction,truth\n").unwrap();
    for bad in ["empty.csv", "header.csv", "one.csv", "missing.csv"] {
        assert_eq!(code(d, &["plot", "--input", bad, "--out", "bad.svg"]), 2, "{bad}");
    }
    assert!(!d.join("bad.svg").exists());
}

#[test]
fn evaluate_reports_each_horizon() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    series(d);
    train(d, "0", "model.json");
    let text = ok(d, &["evaluate", "--model", "model.json", "--data", "s.csv", "--horizons", "1,3,5", "--out", "ev.json"]);
    let rows = text.lines().filter(|l| l.trim_start().starts_with(['1', '3', '5'])).count();
    assert_eq!(rows, 3, "{text}");
    let doc: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ev.json")).unwrap()).unwrap();
    assert_eq!(doc["hyvae"]["horizons"].as_array().unwrap().len(), 3);
    assert!(doc.get("baseline").is_none());
    assert_eq!(code(d, &["evaluate", "--model", "model.json", "--data", "s.csv", "--horizons", "9"]), 1);
}

#[test]
fn ablate_writes_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    series(d);
    let mut args = vec!["-q", "ablate", "--data", "s.csv", "--out", "ab.csv"];
    args.extend_from_slice(SMALL);
    ok(d, &args);
    let rows = data_rows(&d.join("ab.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r.split(',').next().unwrap()).collect();
    assert_eq!(names, ["full", "no_subseq", "no_entire"]);
}

#[test]
fn gridsearch_dry_run_counts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(ok(d, &["gridsearch", "--dry-run"]).starts_with("900 configurations"));
    fs::write(d.join("g.toml"), "L = [1, 2]\nl = [4]\nbatch_size = [32]\nlr = [0.01]\nd = [4]\n").unwrap();
    assert!(ok(d, &["gridsearch", "--dry-run", "--grid", "g.toml"]).starts_with("2 configurations"));
    fs::write(d.join("bad.toml"), "width = [1]\n").unwrap();
    assert_eq!(code(d, &["gridsearch", "--dry-run", "--grid", "bad.toml"]), 1);

    series(d);
    let mut args = vec!["-q", "gridsearch", "--data", "s.csv", "--grid", "g.toml", "--report-out", "g.json"];
    args.extend_from_slice(SMALL);
    ok(d, &args);
    assert_eq!(data_rows(&d.join("grid.csv")).len(), 2);
}

#[test]
fn config_file_merges_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    series(d);
    fs::write(
        d.join("run.toml"),
        "data = \"s.csv\"\nseed = 7\nm = 12\nl = 4\nL = 2\nd_z = 4\nd_h = 4\nn = 5\nepochs = 2\nwarmup_epochs = 2\nbatch_size = 32\nmodel_out = \"cfg.json\"\n",
    )
    .unwrap();
    ok(d, &["-q", "--config", "run.toml", "train"]);
    train(d, "7", "flags.json");
    assert_eq!(fs::read(d.join("cfg.json")).unwrap(), fs::read(d.join("flags.json")).unwrap());

    ok(d, &["-q", "--config", "run.toml", "--seed", "3", "train", "--epochs", "1", "--model-out", "over.json"]);
    let model: serde_json::Value = serde_json::from_slice(&fs::read(d.join("over.json")).unwrap()).unwrap();
    assert_eq!(model["config"]["seed"], 3);
    assert_eq!(model["config"]["m"], 12);

    fs::write(d.join("typo.toml"), "laddr = 3\n").unwrap();
    assert_eq!(code(d, &["--config", "typo.toml", "train"]), 1);
}

#[test]
fn synth_writes_plain_values() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "4", "synth", "--kind", "ar1", "--length", "50", "--out", "x.csv"]);
    let text = fs::read_to_string(d.join("x.csv")).unwrap();
    assert_eq!(text.lines().count(), 50);
    assert!(text.lines().all(|l| l.parse::<f64>().is_ok()));
    ok(d, &["--seed", "4", "synth", "--kind", "ar1", "--length", "50", "--out", "y.csv"]);
    assert_eq!(text, fs::read_to_string(d.join("y.csv")).unwrap());
}
