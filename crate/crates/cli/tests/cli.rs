use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use perfcrd::output::read_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_perfcrd"))
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(format!("{name}.json"))
}

fn perfcrd(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_to(cmd: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    perfcrd(&args)
}

#[test]
fn analyze_writes_csv_and_summary_with_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to("analyze", &config("fig1"), dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("prophecies.csv")).unwrap();
    let first = csv.lines().next().unwrap();
    assert!(first.starts_with("# perfcrd ") && first.contains(" analyze config=") && first.ends_with(" seed=0"), "{first}");
    let (header, rows) = read_csv(&csv).unwrap();
    assert_eq!(header[0], "prediction");
    assert_eq!(rows.len(), 8);
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["counts"]["self_fulfilling"], 4);
    assert_eq!(summary["full_success_self_fulfilling"], true);
    assert_eq!(summary["tradeoff"], false);
    let hash = &summary["provenance"]["config_hash"];
    assert!(first.contains(hash.as_str().unwrap()));
}

#[test]
fn chain_reports_forced_tradeoff() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_to("analyze", &config("fig2"), dir.path(), &[]).status.success());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["tradeoff"], true);
    assert_eq!(summary["best_self_fulfilling"]["prediction"], "000");
}

#[test]
fn reruns_are_byte_identical_on_disk() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert!(run_to("rollout", &config("rollout-fig2"), dir.path(), &["--seed", "3"]).status.success());
        assert!(run_to("gradcheck", &config("gradcheck-horizon1"), dir.path(), &["--seed", "3"]).status.success());
    }
    for name in ["trace.csv", "metrics.json", "gradcheck.csv", "decomposition.csv", "gradcheck.json"] {
        assert_eq!(fs::read(a.path().join(name)).unwrap(), fs::read(b.path().join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_flag_changes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_to("rollout", &config("rollout-fig2"), dir.path(), &["--seed", "11"]).status.success());
    let csv = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.lines().next().unwrap().ends_with("seed=11"));
}

#[test]
fn corrupted_gradient_exits_with_numeric_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_to("gradcheck", &config("gradcheck-corrupted"), dir.path(), &[]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("gradient check failed") && err.contains("coordinates"), "{err}");
    // The report is still written.
    let (_, rows) = read_csv(&fs::read_to_string(dir.path().join("gradcheck.csv")).unwrap()).unwrap();
    assert!(rows.iter().all(|r| r[4] == "0"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"graph":{"generator":"clique","nodes":3},"game":{"B":1,"c":0.2,"r":0.4,"T":"3/2"}}"#).unwrap();
    assert_eq!(run_to("analyze", &bad, dir.path(), &[]).status.code(), Some(2));

    fs::write(&bad, r#"{"graph":{"generator":"clique","nodes":3},"game":{"B":1,"c":0.2,"r":0.4,"T":"1/2"},"extra":1}"#).unwrap();
    assert_eq!(run_to("analyze", &bad, dir.path(), &[]).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(run_to("analyze", &missing, dir.path(), &[]).status.code(), Some(2));

    // No predictor section.
    assert_eq!(run_to("train", &config("fig1"), dir.path(), &[]).status.code(), Some(2));
}

#[test]
fn enumeration_cap_requires_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("big.json");
    fs::write(
        &cfg,
        r#"{"graph":{"generator":"path","nodes":6},"game":{"B":1,"c":0.2,"r":0.4,"T":"1/2"},"analysis":{"cap":5,"table":false}}"#,
    )
    .unwrap();
    let out = run_to("analyze", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    let out = run_to("analyze", &cfg, &dir.path().join("o"), &["--force"]);
    assert!(out.status.success());
    assert!(dir.path().join("o/summary.json").exists());
    assert!(!dir.path().join("o/prophecies.csv").exists());
}

#[test]
fn trained_checkpoint_reloads_for_rollout() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("train.json");
    fs::write(
        &cfg,
        r#"{"seed":1,"graph":{"generator":"scale-free","nodes":6,"attach":2,"seed":0},
            "game":{"B":1,"c":0.2,"r":0.4,"T":"1/2"},
            "predictor":{"architecture":"gnn+linear"},
            "train":{"objective":"welfare-upop","epochs":10,"eval_every":5}}"#,
    )
    .unwrap();
    let out = run_to("train", &cfg, &dir.path().join("t"), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&fs::read_to_string(dir.path().join("t/history.csv")).unwrap()).unwrap();
    assert_eq!(header[0], "epoch");
    assert_eq!(rows.len(), 11);
    assert_eq!(rows.last().unwrap()[0], "10");

    let roll = dir.path().join("roll.json");
    fs::write(
        &roll,
        r#"{"graph":{"generator":"scale-free","nodes":6,"attach":2,"seed":0},
            "game":{"B":1,"c":0.2,"r":0.4,"T":"1/2"},
            "predictor":{"architecture":"gnn+linear","checkpoint":"t/checkpoint.json"}}"#,
    )
    .unwrap();
    let out = run_to("rollout", &roll, &dir.path().join("r"), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(dir.path().join("r/trace.csv")).unwrap();
    let train_trace = fs::read_to_string(dir.path().join("t/trace.csv")).unwrap();
    let body = |s: &str| s.lines().skip(1).collect::<Vec<_>>().join("\n");
    assert_eq!(body(&trace), body(&train_trace));
}

#[test]
fn help_lists_all_subcommands() {
    let out = perfcrd(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in ["analyze", "train", "sweep", "gradcheck", "rollout"] {
        assert!(text.contains(cmd), "{text}");
    }
}
