use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qcofr_core::interpret::{read_rows, ExpansionRow};

fn qcofr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qcofr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn train_smoke(out: &Path, extra: &[&str]) -> Output {
    let cfg = config("smoke.toml");
    let mut args = vec!["train", "--config", path_str(&cfg), "--out", path_str(out)];
    args.extend_from_slice(extra);
    qcofr(&args)
}

#[test]
fn missing_config_exits_with_config_status() {
    let out = qcofr(&["train", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[env]\nkind = \"matrix\"\n\n[trainer]\nsteps = 5\n").unwrap();
    let out = qcofr(&["train", "--config", path_str(&cfg)]);
    assert_eq!(out.status.code(), Some(2));
    let out = qcofr(&["train", "--config", path_str(&config("smoke.toml")), "--override", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = train_smoke(&run, &["--override", "trainer.seed=7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.toml", "metrics.csv", "checkpoint.json", "summary.json"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    let summary = json(&run.join("summary.json"));
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["steps"], 500);

    let ckpt = run.join("checkpoint.json");
    let first = dir.path().join("eval1");
    let second = dir.path().join("eval2");
    for out_dir in [&first, &second] {
        let out = qcofr(&[
            "eval",
            "--checkpoint",
            path_str(&ckpt),
            "--episodes",
            "4",
            "--out",
            path_str(out_dir),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(first.join("episodes.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(second.join("episodes.jsonl")).unwrap());
    assert_eq!(json(&first.join("eval.json")), json(&second.join("eval.json")));

    let report = dir.path().join("nested/report");
    let log = first.join("episodes.jsonl");
    let out = qcofr(&[
        "report",
        "--checkpoint",
        path_str(&ckpt),
        "--log",
        path_str(&log),
        "--out",
        path_str(&report),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["expansion.csv", "coalitions.csv", "similarity.csv", "report.json"] {
        assert!(report.join(f).exists(), "missing {f}");
    }

    let out = qcofr(&[
        "report",
        "--checkpoint",
        path_str(&ckpt),
        "--log",
        path_str(&log),
        "--timestep",
        "999",
        "--out",
        path_str(&report),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn additive_report_has_only_degree_one_terms() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("vdn");
    let out = train_smoke(&run, &["--override", "mixer.kind=\"vdn\"", "--override", "trainer.total_steps=50"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = run.join("checkpoint.json");
    let out = qcofr(&["eval", "--checkpoint", path_str(&ckpt), "--episodes", "2"]);
    assert!(out.status.success());
    let out = qcofr(&[
        "report",
        "--checkpoint",
        path_str(&ckpt),
        "--log",
        path_str(&run.join("episodes.jsonl")),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(&run.join("report/report.json"));
    assert_eq!(summary["degree"], 1);
    let rows: Vec<ExpansionRow> = read_rows(&run.join("report/expansion.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let want = if row.total_degree == 1 { 1.0 } else { 0.0 };
        assert!(row.total_degree <= 1 && (row.coefficient - want).abs() < 1e-10, "{row:?}");
    }
}

#[test]
fn verify_suites_exit_by_outcome() {
    let dir = tempfile::tempdir().unwrap();
    let out = qcofr(&["verify", "env", "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.path().join("verify_env.json").exists());
    let out = qcofr(&["pade-check", "--max-depth", "4", "--draws", "10", "--seeds", "5"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PASS"), "{stdout}");
    let out = qcofr(&["pade-check", "--max-depth", "0"]);
    assert_eq!(out.status.code(), Some(2));
    // igm consistency is below the required rate for this mixer
    let out = qcofr(&["verify", "igm", "--out", path_str(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let outcomes = json(&dir.path().join("igm_violations.json"));
    assert_eq!(outcomes[0]["draws"], 1000);
    let out = qcofr(&["verify", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}
