use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn lvcal(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lvcal"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))).unwrap()
}

fn csv_rows(path: PathBuf) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn generate_writes_default_chains_once() {
    let dir = tempfile::tempdir().unwrap();
    ok(&lvcal(&["generate", "--out", "data"], dir.path()));
    let data = dir.path().join("data");
    let header = fs::read_to_string(data.join("train.csv")).unwrap();
    assert!(header.starts_with("T,K,price\n"));
    assert_eq!(csv_rows(data.join("train.csv")).len(), 200);
    assert_eq!(csv_rows(data.join("test.csv")).len(), 350);
    let manifest = json(data.join("manifest-generate.json"));
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);

    let before = fs::read(data.join("train.csv")).unwrap();
    let again = lvcal(&["generate", "--out", "data", "--seed", "5"], dir.path());
    assert_eq!(again.status.code(), Some(2));
    assert_eq!(fs::read(data.join("train.csv")).unwrap(), before);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad_key = write_config(dir.path(), r#"{"trainig": {}}"#);
    assert_eq!(lvcal(&["generate", "--config", &bad_key, "--out", "a"], dir.path()).status.code(), Some(2));
    assert_eq!(lvcal(&["generate", "--band-low", "0.5", "--band-high", "0.1", "--out", "b"], dir.path()).status.code(), Some(2));
    assert_eq!(lvcal(&["generate", "--mode", "wide", "--out", "c"], dir.path()).status.code(), Some(2));
    let missing = lvcal(&["audit", "--checkpoint", "nope.json", "--out", "d"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    assert!(!dir.path().join("d").exists());
    let missing_quotes = lvcal(&["calibrate", "--train", "nope.csv", "--out", "e"], dir.path());
    assert_eq!(missing_quotes.status.code(), Some(2));
    assert!(!dir.path().join("e").exists());
}

#[test]
fn divergence_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("q.csv"), "T,K,price\n0.5,100,5.6\n1.0,100,8.0\n1.0,110,13.5\n").unwrap();
    let cfg = write_config(dir.path(), r#"{"training": {"widths": [4, 4], "learning_rate": 1e300}}"#);
    let out = lvcal(&["calibrate", "--config", &cfg, "--train", "q.csv", "--epochs", "50", "--out", "run"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(dir.path().join("run/train_report.json"));
    assert_eq!(report["report"]["stop_reason"], "diverged");
}

#[test]
fn hard_pipeline_is_arbitrage_free_and_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"seed": 3, "training": {"widths": [16, 16], "learning_rate": 0.01}, "audit": {"random_points": 2000, "grid_side": 40}}"#,
    );
    let common = ["--config", cfg.as_str(), "--mode", "sparse-hard", "--epochs", "300"];
    ok(&lvcal(&[&["generate", "--out", "data"][..], &common].concat(), dir.path()));
    for run in ["a", "b"] {
        let args = [&["calibrate", "--train", "data/train.csv", "--test", "data/test.csv", "--out", run][..], &common].concat();
        ok(&lvcal(&args, dir.path()));
    }
    let a = fs::read(dir.path().join("a/model.json")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/model.json")).unwrap());
    let ma = json(dir.path().join("a/manifest-calibrate.json"));
    let mb = json(dir.path().join("b/manifest-calibrate.json"));
    assert_eq!(ma["config_hash"], mb["config_hash"]);
    assert_eq!(ma["seeds"]["training"], 3);
    assert_eq!(ma["inputs"].as_array().unwrap().len(), 2);

    let args = [
        &["audit", "--checkpoint", "a/model.json", "--train", "data/train.csv", "--test", "data/test.csv", "--out", "a"][..],
        &common,
    ]
    .concat();
    ok(&lvcal(&args, dir.path()));
    let report = json(dir.path().join("a/audit_report.json"));
    assert_eq!(report["random_points"]["fraction"], 0.0);
    assert_eq!(report["grid"]["n_violating"], 0);
    assert_eq!(report["training_points"]["n_violating"], 0);
    assert!(report["test"]["price_rmse"].as_f64().unwrap().is_finite());
    assert_eq!(csv_rows(dir.path().join("a/violations.csv")).len(), 0);
    assert_eq!(csv_rows(dir.path().join("a/price_surface.csv")).len(), 250);

    // A warm start continues from the saved model.
    let args = [
        &["calibrate", "--train", "data/train.csv", "--init-checkpoint", "a/model.json", "--out", "c"][..],
        &common,
    ]
    .concat();
    ok(&lvcal(&args, dir.path()));
    let first = json(dir.path().join("a/train_report.json"))["report"]["best_loss"].as_f64().unwrap();
    let second = json(dir.path().join("c/train_report.json"))["report"]["best_loss"].as_f64().unwrap();
    assert!(second <= first * 1.01, "{second} vs {first}");
}

#[test]
fn flat_calibration_recovers_flat_local_vol() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "seed": 1,
            "vol": {"kind": "flat", "sigma": 0.2},
            "training": {"widths": [32, 32], "learning_rate": 0.03, "penalty_warmup": 2500},
            "audit": {"surface": {"maturities": {"min": 0.5, "max": 1.5, "n": 5}, "strikes": {"min": 85, "max": 115, "n": 7}}}
        }"#,
    );
    let common = ["--config", cfg.as_str(), "--epochs", "3500"];
    ok(&lvcal(&[&["generate", "--out", "."][..], &common].concat(), dir.path()));
    ok(&lvcal(&[&["calibrate", "--train", "train.csv", "--out", "."][..], &common].concat(), dir.path()));
    ok(&lvcal(&[&["localvol", "--checkpoint", "model.json", "--out", "."][..], &common].concat(), dir.path()));
    let rows = csv_rows(dir.path().join("local_vol.csv"));
    assert_eq!(rows.len(), 35);
    let mut vols: Vec<f64> = rows.iter().filter(|r| r[3] == "0").map(|r| r[2].parse().unwrap()).collect();
    assert!(vols.len() >= 30, "{} valid cells", vols.len());
    vols.sort_by(f64::total_cmp);
    let median = vols[vols.len() / 2];
    assert!((median / 0.2 - 1.0).abs() < 0.1, "median local vol {median}");
}

#[test]
fn ground_truth_backtest_reprices_within_noise() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{"train_grid": {"maturities": {"min": 0.25, "max": 1.0, "n": 4}, "strikes": {"min": 85, "max": 115, "n": 5}}}"#,
    );
    let common = ["--config", cfg.as_str(), "--paths", "20000", "--steps", "100", "--seed", "2"];
    ok(&lvcal(&[&["generate", "--out", "."][..], &common].concat(), dir.path()));
    ok(&lvcal(&[&["backtest", "--vol-source", "truth", "--train", "train.csv", "--out", "."][..], &common].concat(), dir.path()));
    let report = json(dir.path().join("backtest_report.json"));
    let rmse = report["rmse"].as_f64().unwrap();
    let se = report["pooled_std_error"].as_f64().unwrap();
    assert!(rmse <= 3.0 * se, "{rmse} vs {se}");
    assert_eq!(csv_rows(dir.path().join("backtest_prices.csv")).len(), 20);

    ok(&lvcal(&[&["implied-vol", "--quotes", "train.csv", "--out", "iv"][..], &common].concat(), dir.path()));
    let ivs = csv_rows(dir.path().join("iv/implied_vols.csv"));
    assert_eq!(ivs.len(), 20);
    for r in &ivs {
        let iv: f64 = r[3].parse().unwrap();
        assert!((0.19..0.23).contains(&iv), "{r:?}");
    }
}

#[test]
fn gridded_vol_source_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("q.csv"), "T,K,price\n1.0,100,7.9656\n").unwrap();
    fs::write(
        dir.path().join("vol.csv"),
        "T,K,value,flag\n0.5,80,0.2,0\n0.5,120,0.2,0\n1.5,80,NaN,1\n1.5,120,0.2,0\n",
    )
    .unwrap();
    let out = lvcal(
        &["backtest", "--vol-source", "vol.csv", "--train", "q.csv", "--paths", "20000", "--out", "bt"],
        dir.path(),
    );
    ok(&out);
    let report = json(dir.path().join("bt/backtest_report.json"));
    assert!(report["rmse"].as_f64().unwrap() < 0.15);
}
