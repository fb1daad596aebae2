use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fade_core::bounds::bound_report;
use fade_core::{BoundInputs, RunReport, Task};
use serde_json::Value;

const TINY: &str = "users=120 items=80 periods=3 activity=12";

fn fade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fade")).args(args).output().expect("binary runs")
}

fn quick_run(extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--synthetic",
        TINY,
        "--dim",
        "8",
        "--batch",
        "64",
        "--epochs-pretrain",
        "3",
        "--epochs-update",
        "2",
        "--k",
        "5",
        "--eval-negs",
        "20",
    ];
    args.extend_from_slice(extra);
    fade(&args)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_report(dir: &Path) -> RunReport {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn bounds_prints_the_calculator_report() {
    let out = fade(&["bounds", "--gamma", "0.4", "--t-te", "3", "--delta", "0.05", "--m0", "5000", "--m1", "800", "--d", "0.3,0.2,0.1"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let got: Value = serde_json::from_slice(&out.stdout).unwrap();
    let want = bound_report(&BoundInputs {
        gamma: 0.4,
        t_te: 3,
        m0: 5000.0,
        m1: 800.0,
        delta: 0.05,
        shifts: vec![0.3, 0.2, 0.1],
        l_star: 0.0,
        epsilon: 0.0,
    })
    .unwrap();
    assert_eq!(got, serde_json::to_value(want).unwrap());
}

#[test]
fn bounds_rejects_a_short_shift_list() {
    let out = fade(&["bounds", "--gamma", "0.4", "--t-te", "3", "--delta", "0.05", "--m0", "5000", "--m1", "800", "--d", "0.3"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("error ["));
}

#[test]
fn run_writes_reports_and_honours_strategies() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = quick_run(&["--strategy", "finetune", "--strategy", "fade", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["report.json", "metrics.csv", "perf_over_time.tsv", "abs_pd_over_time.tsv"] {
        assert!(out_dir.join(f).is_file(), "{f} missing");
    }
    let report = read_report(&out_dir);
    let names: Vec<&str> = report.strategies.iter().map(|s| s.strategy.as_str()).collect();
    assert_eq!(names, ["finetune", "fade"]);
    assert_eq!(report.config.periods, 3);
}

#[test]
fn run_without_out_prints_json() {
    let out = quick_run(&["--strategy", "pretrain", "--emit", "json"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report: RunReport = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report.strategies.len(), 1);
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.toml");
    fs::write(
        &config,
        r#"
strategies = ["finetune", "fade"]
periods = 2
seed = 5

[hyper]
lambda = 0.25
mu = 3

[eval]
task = "next"
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = quick_run(&[
        "--config",
        config.to_str().unwrap(),
        "--periods",
        "3",
        "--lambda",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let cfg = read_report(&out_dir).config;
    assert_eq!(cfg.strategies, ["finetune", "fade"]);
    assert_eq!(cfg.hyper.lambda, 2.0);
    assert_eq!(cfg.hyper.mu, 3);
    assert_eq!(cfg.periods, 3);
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.eval.task, Task::Next);
}

#[test]
fn invalid_runs_exit_with_a_category_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = quick_run(&["--strategy", "fade", "--strategy", "fade", "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("error [config]"));
    assert!(!out_dir.exists());

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "periods = \"three\"\n").unwrap();
    let out = fade(&["run", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ingest_check_reports_the_split() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("log.csv");
    let mut text = String::from("user,item,rating,timestamp,attr\n");
    for i in 0..400u32 {
        let user = i % 20;
        text.push_str(&format!("u{user},i{},{},{i},{}\n", (i * 7) % 50, 1 + i % 5, user % 2));
    }
    fs::write(&data, text).unwrap();
    let out = fade(&["ingest-check", "--data", data.to_str().unwrap(), "--periods", "4"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["users"], 20);
    assert_eq!(summary["records"], 400);
    assert_eq!(summary["group_users"], serde_json::json!([10, 10]));
    assert_eq!(summary["period_sizes"].as_array().unwrap().len(), 5);

    fs::write(&data, "u1,i1,x,1,0\n").unwrap();
    let out = fade(&["ingest-check", "--data", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("error [data]"));
}
