use std::path::Path;
use std::process::{Command, Output};

fn tsen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsen")).args(args).arg("-q").output().unwrap()
}

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(line.lines().last().unwrap()).unwrap();
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    let out = tsen(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
    assert_eq!(tsen(&["simulate", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(tsen(&["--help"]).status.code(), Some(0));
    assert_eq!(tsen(&["--version"]).status.code(), Some(0));
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsen(&["simulate", "--case", "7", "--out", s(&dir.path().join("p.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "config");

    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"data": {"panel": "p.csv"}, "trian": {}}"#).unwrap();
    let out = tsen(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));

    // k is required for clustering
    std::fs::write(&cfg, r#"{"data": {"panel": "p.csv"}}"#).unwrap();
    let out = tsen(&["cluster", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"data": {"panel": "missing.csv"}, "cluster": {"k": 1}}"#).unwrap();
    let out = tsen(&["cluster", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "io");

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "series_id,date,target\na,2000-01-01,1\na,2000-01-01,2\n").unwrap();
    std::fs::write(&cfg, r#"{"data": {"panel": "bad.csv"}, "cluster": {"k": 1}}"#).unwrap();
    let out = tsen(&["cluster", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_kind(&out), "ingest");
}

#[test]
fn simulate_then_train_writes_parameter_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = tsen(&["simulate", "--case", "2", "--seed", "7", "--out", s(&dir.path().join("p.csv"))]);
    assert!(out.status.success());
    let cfg = dir.path().join("c.json");
    std::fs::write(
        &cfg,
        r#"{"data": {"panel": "p.csv"}, "cluster": {"k": 2},
            "model": {"hidden_width": 4, "depth": 1, "baselines": false},
            "train": {"epochs": 1, "batch_size": 64}}"#,
    )
    .unwrap();
    let out = tsen(&["train", "--config", s(&cfg)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let models: Vec<_> = std::fs::read_dir(dir.path().join("out/models")).unwrap().collect();
    assert_eq!(models.len(), 2);
    let first = std::fs::read_to_string(models[0].as_ref().unwrap().path()).unwrap();
    assert!(first.starts_with("tsen-params 1"));
}

#[test]
fn compare_reports_friedman_and_signed_rank() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.csv");
    let mut text = String::from("series,A,B,C\n");
    for i in 0..8 {
        let x = i as f64 * 0.1;
        text.push_str(&format!("s{i},{},{},{}\n", 1.0 + x, 1.5 + x * 1.1, 2.0 + x));
    }
    std::fs::write(&scores, text).unwrap();
    let out_file = dir.path().join("cmp.jsonl");
    let out = tsen(&["compare", "--scores", s(&scores), "--out", s(&out_file)]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout, std::fs::read_to_string(&out_file).unwrap());
    let lines: Vec<serde_json::Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["test"]["method"], "friedman");
    // perfectly ordered methods over 8 rows: chi2 = 2 * 8 = 16
    assert!((lines[0]["test"]["statistic"].as_f64().unwrap() - 16.0).abs() < 1e-12);
    assert_eq!(lines[1]["a"], "A");
    assert_eq!(lines[1]["b"], "B");
    // A beats B on all 8 rows: exact one-sided p = 2^-8
    assert!((lines[1]["test"]["p_value"].as_f64().unwrap() - 1.0 / 256.0).abs() < 1e-15);

    let out = tsen(&["compare", "--scores", s(&scores), "--a", "A", "--b", "Z"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bench_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = tsen(&[
            "bench", "--case", "3", "--reps", "2", "--seed", "4", "--obs", "50", "--epochs", "2", "--hidden", "3",
            "--depth", "1", "--lookback", "3", "--methods", "TSEN-CNN,CNN,RNN", "--out", s(&out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["report.json", "rmse_median.csv", "mae_median.csv", "rmse_mean.csv", "mae_mean.csv", "rmse_all.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
