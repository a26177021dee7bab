use std::fs;
use std::path::{Path, PathBuf};

use calprobe::run::{RunConfig, RunError, Runner, FAILURE_FILE, MANIFEST_FILE};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn config(out: &Path) -> RunConfig {
    let mut c = RunConfig::load(fixture().join("run.toml")).unwrap();
    c.output_dir = out.to_path_buf();
    c
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn fixture_run_writes_every_report() {
    let dir = tempfile::tempdir().unwrap();
    let runner = Runner::new(config(dir.path())).unwrap();
    let summary = runner.run().unwrap();
    // 8 groups x 6 estimators x 2 filters
    assert_eq!(summary.reports, 96);
    assert_eq!(summary.sweep_rows, 3);
    let base = dir.path().join("reports/base");
    for e in [
        "base",
        "margin",
        "average_vote",
        "average_min",
        "consistency_vote",
        "consistency_min",
    ] {
        assert!(base.join(e).join("all.json").is_file(), "{e}");
        assert!(base.join(e).join("geography.arc.csv").is_file(), "{e}");
    }
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(base.join("base/all.json")).unwrap()).unwrap();
    assert_eq!(report["config_hash"], runner.config_hash());
    assert_eq!(report["seed"], 2024);
    assert_eq!(report["n_total"], 40);
    assert!(!dir.path().join(FAILURE_FILE).exists());
}

#[test]
fn deltas_are_injected_minus_base() {
    let dir = tempfile::tempdir().unwrap();
    Runner::new(config(dir.path())).unwrap().run().unwrap();
    let mut rdr = csv::Reader::from_path(dir.path().join("deltas.csv")).unwrap();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec.unwrap();
        let (group, est, filter) = (&rec[0], &rec[1], &rec[2]);
        let ace = |g: &str| -> f64 {
            let p = dir.path().join(format!("reports/{g}/{est}/{filter}.json"));
            let v: serde_json::Value = serde_json::from_slice(&fs::read(p).unwrap()).unwrap();
            v["ace"].as_f64().unwrap()
        };
        let delta: f64 = rec[5].parse().unwrap();
        assert_eq!(delta, ace(group) - ace("base"));
        rows += 1;
    }
    assert_eq!(rows, 7 * 6 * 2);
}

#[test]
fn stages_compose_to_run() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Runner::new(config(a.path())).unwrap().run().unwrap();
    let r = Runner::new(config(b.path())).unwrap();
    r.validate().unwrap();
    r.render().unwrap();
    r.score().unwrap();
    r.estimate().unwrap();
    r.report().unwrap();
    r.sweep().unwrap();
    assert_eq!(tree(a.path()), tree(b.path()));
}

#[test]
fn estimate_without_scores_names_the_missing_file() {
    let dir = tempfile::tempdir().unwrap();
    let r = Runner::new(config(dir.path())).unwrap();
    r.render().unwrap();
    let err = r.estimate().unwrap_err();
    let expected = dir.path().join("scores.jsonl");
    assert!(
        matches!(&err, RunError::MissingArtifact { path, .. } if *path == expected),
        "{err}"
    );
    let failure: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join(FAILURE_FILE)).unwrap()).unwrap();
    assert_eq!(failure["stage"], "estimate");
    assert!(failure["error"].as_str().unwrap().contains("scores.jsonl"));
    // a later successful stage clears the failure manifest
    r.score().unwrap();
    assert!(!dir.path().join(FAILURE_FILE).exists());
    assert!(dir.path().join(MANIFEST_FILE).exists());
}

#[test]
fn missing_dataset_fails_before_any_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(&dir.path().join("out"));
    c.dataset = dir.path().join("nope");
    let err = Runner::new(c).unwrap_err();
    assert!(matches!(err, RunError::Config(_)));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn incomplete_score_file_lists_missing_triples() {
    let dir = tempfile::tempdir().unwrap();
    let full = tempfile::tempdir().unwrap();
    let mut c = config(full.path());
    c.injection = Default::default();
    c.sweep = None;
    Runner::new(c.clone()).unwrap().run().unwrap();
    let scores = fs::read_to_string(full.path().join("scores.jsonl")).unwrap();
    let kept: Vec<&str> = scores
        .lines()
        .filter(|l| !l.contains("\"P36:03\""))
        .collect();
    let file = dir.path().join("partial.jsonl");
    fs::write(&file, kept.join("\n")).unwrap();
    c.backend = calprobe::scoring::BackendSpec::File {
        path: file,
        log_base: Default::default(),
    };
    c.output_dir = dir.path().join("out");
    let err = Runner::new(c).unwrap().run().unwrap_err();
    assert_eq!(err.module(), "score_acquisition");
    assert!(err.to_string().contains("P36:03"), "{err}");
}
