use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/run.toml")
}

fn calprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_calprobe"))
        .args(args)
        .env_remove("CALPROBE_SCORER_ENDPOINT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = calprobe(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn stage_subcommands_compose_to_run() {
    let cfg = fixture_config();
    let cfg = cfg.to_str().unwrap();
    let whole = tempfile::tempdir().unwrap();
    let staged = tempfile::tempdir().unwrap();
    let w = whole.path().to_str().unwrap();
    let s = staged.path().to_str().unwrap();

    let summary: Value = serde_json::from_str(&ok(&["run", "-c", cfg, "--output-dir", w])).unwrap();
    assert_eq!(summary["sweep_rows"], 3);

    for stage in ["render", "score", "estimate", "report"] {
        ok(&[stage, "-c", cfg, "--output-dir", s]);
    }
    let rows: Value = serde_json::from_str(&ok(&["sweep", "-c", cfg, "--output-dir", s])).unwrap();
    let ks: Vec<u64> = rows
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["k"].as_u64().unwrap())
        .collect();
    assert_eq!(ks, [2, 5, 10]);

    assert_eq!(tree(whole.path()), tree(staged.path()));
}

#[test]
fn estimate_without_scores_names_the_missing_file() {
    let out_dir = tempfile::tempdir().unwrap();
    let out = calprobe(&[
        "estimate",
        "-c",
        fixture_config().to_str().unwrap(),
        "--output-dir",
        out_dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error [cli_runner]:"), "{err}");
    assert!(err.contains("scores.jsonl"), "{err}");
}

#[test]
fn validate_reports_stats_and_writes_nothing() {
    let out_dir = tempfile::tempdir().unwrap();
    let target = out_dir.path().join("never");
    let stats: Value = serde_json::from_str(&ok(&[
        "validate",
        "-c",
        fixture_config().to_str().unwrap(),
        "--output-dir",
        target.to_str().unwrap(),
    ]))
    .unwrap();
    assert_eq!(stats["relations"], 4);
    assert_eq!(stats["instances"], 40);
    assert!(!target.exists());
}

#[test]
fn flags_override_config_fields() {
    let out_dir = tempfile::tempdir().unwrap();
    let o = out_dir.path().to_str().unwrap();
    let cfg = fixture_config();
    let cfg = cfg.to_str().unwrap();
    ok(&["render", "-c", cfg, "--output-dir", o]);
    ok(&["score", "-c", cfg, "--output-dir", o]);
    ok(&[
        "estimate",
        "-c",
        cfg,
        "--output-dir",
        o,
        "--estimators",
        "base,consistency_vote3",
    ]);
    ok(&[
        "report",
        "-c",
        cfg,
        "--output-dir",
        o,
        "--estimators",
        "base,consistency_vote3",
        "--bins",
        "2",
        "--rejected-as-zero-error",
        "--seed",
        "2024",
    ]);
    let report: Value = serde_json::from_slice(
        &std::fs::read(
            out_dir
                .path()
                .join("reports/base/consistency_vote3/all.json"),
        )
        .unwrap(),
    )
    .unwrap();
    assert_eq!(report["bins"].as_array().unwrap().len(), 2);
    assert_eq!(report["rejected_as_zero_error"], true);
    assert_eq!(report["seed"], 2024);
    assert!(!out_dir.path().join("reports/base/margin").exists());

    let bad = calprobe(&["validate", "-c", cfg, "--estimators", "median"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn inject_lists_every_derived_variant() {
    let out = ok(&["inject", "-c", fixture_config().to_str().unwrap()]);
    let variants: Vec<Value> = out
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    // 4 relations x 5 templates x (2 verbal + 5 numerical)
    assert_eq!(variants.len(), 4 * 5 * 7);
    assert!(variants.iter().any(|v| v["relation_id"] == "P20"
        && v["injection"]["marker"] == "certainly"
        && v["parent"] == 0));
}

#[test]
fn simulated_bundle_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    ok(&[
        "simulate",
        "--out",
        d,
        "--profile",
        "overconfident",
        "--delta",
        "0.2",
        "-n",
        "4000",
        "--seed",
        "9",
    ]);
    let cfg = dir.path().join("run.toml");
    ok(&["run", "-c", cfg.to_str().unwrap()]);
    let report: Value = serde_json::from_slice(
        &std::fs::read(dir.path().join("out/reports/base/base/all.json")).unwrap(),
    )
    .unwrap();
    let ace = report["ace"].as_f64().unwrap();
    assert!((0.15..0.25).contains(&ace), "ACE {ace}");
}
