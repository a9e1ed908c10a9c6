//! End-to-end runs of the command-line binary.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_degen-spde"))
}

fn run(args: &[&str], out: &Path) -> i32 {
    bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("DEGEN_SPDE_THREADS")
        .status()
        .unwrap()
        .code()
        .unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn every_subcommand_runs_and_passes() {
    let tmp = tempfile::tempdir().unwrap();
    for (i, args) in [
        vec!["simulate"],
        vec!["check", "--estimate", "cacciopoli"],
        vec!["null-control", "--alpha", "0.3", "--eps", "0.05", "--tau-grid", "1e-1:1e-4"],
        vec!["inverse-source"],
        vec!["hardy"],
        vec!["observability", "--alpha", "0.4", "--eps", "0.01"],
    ]
    .iter()
    .enumerate()
    {
        let dir = tmp.path().join(i.to_string());
        assert_eq!(run(args, &dir), 0, "{args:?}");
        assert!(dir.join("summary.json").exists());
        assert!(!csv_files(&dir).is_empty());
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["pass"], true);
    }
}

#[test]
fn same_seed_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let args = ["check", "--estimate", "forward-regular", "--seed", "9", "--n", "7"];
    assert_eq!(run(&args, &a), 0);
    let status = bin()
        .args(args)
        .args(["--threads", "1", "--out"])
        .arg(&b)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(csv_files(&a), csv_files(&b));
    let c = tmp.path().join("c");
    assert_eq!(run(&["check", "--estimate", "forward-regular", "--seed", "10", "--n", "7"], &c), 0);
    assert_ne!(csv_files(&a), csv_files(&c));
}

#[test]
fn config_file_and_echo_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "seed = 4\n[problem]\nalpha = 1.5\n[hardy]\nprofiles = 10\n").unwrap();
    let out = tmp.path().join("o");
    assert_eq!(run(&["hardy", "--config", cfg.to_str().unwrap()], &out), 0);
    let echo = std::fs::read_to_string(out.join("config.toml")).unwrap();
    let parsed = degen_spde::config::RunConfig::parse(&echo).unwrap();
    assert_eq!(parsed.seed, 4);
    assert_eq!(parsed.problem.alpha, 1.5);
    assert_eq!(parsed.to_toml(), echo);
}

#[test]
fn invalid_config_lists_every_problem_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(
        &cfg,
        "[problem]\nalpha = 2.5\nomega1 = [0.3, 0.9]\n[discretization]\ndepth = 20\n[hardy]\ngamma = [1.0]\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let result = bin()
        .args(["hardy", "--config", cfg.to_str().unwrap(), "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_ne!(result.status.code(), Some(0));
    let err = String::from_utf8_lossy(&result.stderr);
    for needle in ["alpha", "omega1", "cap", "gamma"] {
        assert!(err.contains(needle), "missing {needle} in {err}");
    }
    assert!(!out.exists());
}

#[test]
fn unknown_key_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[problem]\nalhpa = 0.5\n").unwrap();
    let out = tmp.path().join("o");
    assert_ne!(run(&["simulate", "--config", cfg.to_str().unwrap()], &out), 0);
    assert!(!out.exists());
}
