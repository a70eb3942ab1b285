use std::path::Path;
use std::process::{Command, Output};

use dwsl::datagen::read_dataset;

fn dwsl(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dwsl"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn gen(dir: &Path, out: &str, seed: &str) -> Output {
    dwsl(
        &["gen-data", "--env", "chain-5", "--behavior", "noisy_expert:0.2", "--traj", "100", "--seed", seed, "--out", out],
        dir,
    )
}

fn write_config(dir: &Path, name: &str, body: &str) {
    std::fs::write(dir.join(name), format!("[run]\ndataset = \"d.jsonl\"\n{body}")).unwrap();
}

#[test]
fn gen_data_writes_requested_trajectories_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(dir.path(), "d.jsonl", "7");
    assert!(out.status.success());
    let summary = &stdout_json(&out)[0];
    assert_eq!(summary["trajectories"], 100);
    assert!(summary["returns"]["mean"].is_number());
    assert_eq!(read_dataset(dir.path().join("d.jsonl")).unwrap().len(), 100);
    assert!(gen(dir.path(), "e.jsonl", "7").status.success());
    let a = std::fs::read(dir.path().join("d.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("e.jsonl")).unwrap());
    assert!(gen(dir.path(), "f.jsonl", "8").status.success());
    assert_ne!(a, std::fs::read(dir.path().join("f.jsonl")).unwrap());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dwsl(&["gen-data", "--env", "maze-9", "--behavior", "random", "--traj", "3", "--out", "x.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chain-<N>"));
    let out = dwsl(&["gen-data", "--env", "chain-5", "--behavior", "noisy_expert:1.5", "--traj", "3", "--out", "x.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(dwsl(&["eval", "--policy", "missing.json"], dir.path()).status.code(), Some(2));
    assert_eq!(dwsl(&["stats", "--data", "missing.jsonl"], dir.path()).status.code(), Some(2));
    assert_eq!(dwsl(&["train", "--config", "missing.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(dwsl(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn train_validates_before_work() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "d.jsonl", "7").status.success());
    write_config(dir.path(), "b.toml", "algorithm = \"dwsl_b\"\nout_dir = \"b\"\n[binning]\nn_step = 2\n");
    let out = dwsl(&["train", "--config", "b.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("b").exists());
    write_config(dir.path(), "u.toml", "[train]\nlearning_rate = 0.1\n");
    assert_eq!(dwsl(&["train", "--config", "u.toml"], dir.path()).status.code(), Some(2));
}

#[test]
fn gcsl_skips_the_distance_phase() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "d.jsonl", "7").status.success());
    write_config(dir.path(), "g.toml", "algorithm = \"gcsl\"\nout_dir = \"g\"\n");
    let out = dwsl(&["train", "--config", "g.toml"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = dir.path().join("g");
    assert!(run.join("policy.json").is_file());
    assert!(run.join("curves.csv").is_file());
    assert!(run.join("resolved_config.toml").is_file());
    assert!(!run.join("distance.json").exists());
}

#[test]
fn eval_reproduces_training_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "d.jsonl", "7").status.success());
    write_config(dir.path(), "t.toml", "out_dir = \"t\"\n[eval]\nepisodes = 50\nseed = 4\nmode = \"sample\"\n");
    assert!(dwsl(&["train", "--config", "t.toml"], dir.path()).status.success());
    let run = dir.path().join("t");
    let trained: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(run.join("eval.jsonl")).unwrap().lines().last().unwrap()).unwrap();
    let policy = run.join("policy.json");
    let out = dwsl(
        &["eval", "--policy", policy.to_str().unwrap(), "--episodes", "50", "--seed", "4", "--mode", "sample"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = &stdout_json(&out)[0]["report"];
    for key in ["success_rate", "mean_steps_at_goal", "mean_first_hit", "fallback_count"] {
        assert_eq!(report[key], trained[key], "{key}");
    }

    let out = dwsl(&["eval", "--policy", policy.to_str().unwrap(), "--episodes", "200", "--seed", "3"], dir.path());
    let report = &stdout_json(&out)[0]["report"];
    assert_eq!(report["episodes"], 200);
    assert_eq!(report["seed"], 3);
}

#[test]
fn verify_reports_and_filters_suites() {
    let dir = tempfile::tempdir().unwrap();
    let out = dwsl(&["verify", "--env", "chain-5", "--suite", "corollary"], dir.path());
    assert!(out.status.success());
    let records = stdout_json(&out);
    assert!(!records.is_empty());
    assert!(records.iter().all(|r| r["check_id"] == "corollary_change_of_variables" && r["status"] == "pass"));

    let out = dwsl(&["verify", "--env", "chain-5", "--suite", "corollary", "--behavior", "random"], dir.path());
    assert!(out.status.success());
    assert!(stdout_json(&out).iter().all(|r| r["status"] == "skipped" && r["reason"].is_string()));

    let out = dwsl(&["verify", "--env", "chain-5", "--suite", "all", "--out", "report.jsonl"], dir.path());
    let text = std::fs::read_to_string(dir.path().join("report.jsonl")).unwrap();
    let records: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    for id in ["finite_horizon_equality", "discounted_bound", "corollary_change_of_variables", "policy_extraction", "fixed_point_residual"] {
        assert!(records.iter().any(|r| r["check_id"] == id), "{id}");
    }
    let any_failed = records.iter().any(|r| r["status"] == "fail");
    assert_eq!(out.status.code(), Some(if any_failed { 1 } else { 0 }));
}
