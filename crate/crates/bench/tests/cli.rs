use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn synth_then_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.toml");
    std::fs::write(&spec, "n = 1500\nperiod = 96\nanomaly_rate = 0.02\n").unwrap();
    let csv = dir.path().join("kpi.csv");
    let status = bench()
        .args([
            "synth",
            "--spec",
            spec.to_str().unwrap(),
            "--out",
            csv.to_str().unwrap(),
            "--seed",
            "9",
        ])
        .status()
        .unwrap();
    assert!(status.success());
    let ts = alforest_core::timeseries::load_csv(&csv, &Default::default()).unwrap();
    assert_eq!(ts.len(), 1500);

    // the truth file scored against itself is perfect
    let out = bench()
        .args([
            "eval",
            "--truth",
            csv.to_str().unwrap(),
            "--pred",
            csv.to_str().unwrap(),
            "-k",
            "7",
            "--json",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["f1"], 1.0);
    assert_eq!(report["k"], 7);

    let features = dir.path().join("features.csv");
    let status = bench()
        .args([
            "features",
            "--input",
            csv.to_str().unwrap(),
            "--out",
            features.to_str().unwrap(),
        ])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(std::fs::read_to_string(features).unwrap().lines().count(), 1501);
}

#[test]
fn eval_reports_hand_case() {
    let dir = tempfile::tempdir().unwrap();
    let truth = dir.path().join("truth.csv");
    let pred = dir.path().join("pred.csv");
    std::fs::write(
        &truth,
        "timestamp,value,label\n0,1,0\n60,1,1\n120,1,1\n180,1,1\n240,1,0\n",
    )
    .unwrap();
    std::fs::write(&pred, "timestamp,prediction\n0,0\n60,0\n120,1\n180,0\n240,1\n").unwrap();
    let out = bench()
        .args([
            "eval",
            "--truth",
            truth.to_str().unwrap(),
            "--pred",
            pred.to_str().unwrap(),
            "-k",
            "1",
            "--json",
        ])
        .output()
        .unwrap();
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["precision"], 0.75);
    assert_eq!(report["recall"], 1.0);
}

#[test]
fn run_writes_csv_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.toml");
    std::fs::write(
        &config,
        "[forest]\nn_trees = 10\n[grid]\nstrategies = [\"TA\"]\nupdates = [\"O\"]\nbudgets = [0.0, 0.01]\n\
         [[dataset]]\nkind = \"synthetic\"\n[dataset.spec]\nn = 1000\nperiod = 96\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = bench()
        .args([
            "--jobs",
            "2",
            "run",
            "--config",
            config.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--seed",
            "5",
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("dataset"));
    let results = std::fs::read_to_string(out_dir.join("results.csv")).unwrap();
    assert_eq!(results.lines().count(), 3);
    assert!(results
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("synthetic,synth-5,5,TA,O,0.0,"));
    assert!(out_dir.join("summary.csv").exists());
}

#[test]
fn bad_config_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[grid]\nbudgets = [2.0]\n").unwrap();
    let out = bench()
        .args(["run", "--config", config.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
}
