//! Configuration-driven pipeline behind the `calprobe` binary.
//!
//! Stages communicate only through files in the output directory:
//!
//! | stage    | reads                      | writes                                   |
//! |----------|----------------------------|------------------------------------------|
//! | render   | dataset                    | `statements.jsonl`                       |
//! | score    | `statements.jsonl`         | `scores.jsonl`                           |
//! | estimate | dataset, `scores.jsonl`    | `outcomes/<group>.jsonl`                 |
//! | report   | dataset, `outcomes/`       | `reports/`, `summary.csv`, `deltas.csv`  |
//! | sweep    | dataset, `scores.jsonl`    | `sweep.csv`                              |
//!
//! Every stage finishes by rewriting `manifest.json` from the directory
//! contents, so running the stages one by one leaves the same bytes as
//! [`Runner::run`]. A failing stage writes `failure.json` instead.

pub mod config;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{RunConfig, ScoringConfig, SweepConfig, TemplateConfig, SCHEMA_VERSION};

use crate::confidence::{
    evaluate_estimators, group_by_instance, ConfidenceError, ConfidenceOutcome, Estimator,
    EstimatorOptions,
};
use crate::metrics::{
    filtered_report, option_count_sweep, CalibrationReport, MetricsError, ReportFilter, SweepRow,
};
use crate::probe_data::{
    derive_injected_variants, load_dataset, save_dataset, Cardinality, Dataset, DatasetStats,
    ProbeDataError, TemplateVariant,
};
use crate::scoring::{
    assemble_vectors, fetch_scores, render_batch, BackendSpec, Ingest, RenderedStatement,
    ScoreError, ScoreSet, VariantKey,
};
use crate::seed::SeedStream;
use crate::simulate::{SimulateError, Simulation};

pub const STATEMENTS_FILE: &str = "statements.jsonl";
pub const SCORES_FILE: &str = "scores.jsonl";
pub const OUTCOMES_DIR: &str = "outcomes";
pub const REPORTS_DIR: &str = "reports";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const DELTAS_FILE: &str = "deltas.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const FAILURE_FILE: &str = "failure.json";
pub const BASE_GROUP: &str = "base";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing artifact {}; run the {stage} stage first", path.display())]
    MissingArtifact { path: PathBuf, stage: &'static str },
    #[error("score set mixes scorers {0:?}")]
    MixedScorers(Vec<String>),
    #[error("probe_data: {0}")]
    ProbeData(#[from] ProbeDataError),
    #[error("score_acquisition: {0}")]
    Scoring(#[from] ScoreError),
    #[error("confidence: {0}")]
    Confidence(#[from] ConfidenceError),
    #[error("calib_metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("simulator: {0}")]
    Simulate(#[from] SimulateError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: line {line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl RunError {
    /// Module the error originates from.
    pub fn module(&self) -> &'static str {
        match self {
            RunError::ProbeData(_) => "probe_data",
            RunError::Scoring(_) | RunError::MixedScorers(_) => "score_acquisition",
            RunError::Confidence(_) => "confidence",
            RunError::Metrics(_) => "calib_metrics",
            RunError::Simulate(_) => "simulator",
            _ => "cli_runner",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, RunError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), RunError> {
    let mut w = create(path)?;
    for item in items {
        serde_json::to_writer(&mut w, item).expect("artifact serializes");
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).expect("artifact serializes");
    w.write_all(b"\n").map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for row in rows {
        w.serialize(row).map_err(|e| RunError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io_err(path))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(
    path: &Path,
    stage: &'static str,
) -> Result<Vec<T>, RunError> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => RunError::MissingArtifact {
            path: path.to_path_buf(),
            stage,
        },
        _ => io_err(path)(e),
    })?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| RunError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn sha256_file(path: &Path) -> Result<String, RunError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), RunError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(io_err(dir))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// Counts returned by [`Runner::run`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunSummary {
    pub statements: usize,
    pub score_records: usize,
    pub outcomes: usize,
    pub reports: usize,
    pub sweep_rows: usize,
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    group: &'a str,
    estimator: String,
    filter: &'a str,
    recommended: bool,
    n_total: usize,
    n_answered: usize,
    rejection_rate: f64,
    accuracy: Option<f64>,
    ace: Option<f64>,
    brier: Option<f64>,
    h_score: Option<f64>,
}

#[derive(Debug, Serialize)]
struct DeltaRow<'a> {
    group: &'a str,
    estimator: String,
    filter: &'a str,
    ace_base: Option<f64>,
    ace_injected: Option<f64>,
    delta: Option<f64>,
}

/// A validated configuration bound to its output directory.
#[derive(Debug, Clone)]
pub struct Runner {
    config: RunConfig,
    hash: String,
}

impl Runner {
    /// Validates `config` before any work is done.
    pub fn new(config: RunConfig) -> Result<Self, RunError> {
        config.validate()?;
        let hash = config.hash();
        Ok(Self { config, hash })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    fn out(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.config.output_dir.join(rel)
    }

    /// Injection groups as (name, injection id); the base group first.
    pub fn groups(&self) -> Vec<(String, Option<String>)> {
        std::iter::once((BASE_GROUP.to_string(), None))
            .chain(
                self.config
                    .injection
                    .injections()
                    .iter()
                    .filter_map(|i| i.id())
                    .map(|id| (id.clone(), Some(id))),
            )
            .collect()
    }

    fn filters(&self) -> Vec<ReportFilter> {
        std::iter::once(ReportFilter::all())
            .chain(self.config.filters.iter().cloned())
            .collect()
    }

    fn dataset(&self) -> Result<Dataset, RunError> {
        Ok(load_dataset(&self.config.dataset)?)
    }

    fn stage<T>(
        &self,
        name: &'static str,
        f: impl FnOnce() -> Result<T, RunError>,
    ) -> Result<T, RunError> {
        let dir = &self.config.output_dir;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let failure = self.out(FAILURE_FILE);
        if failure.exists() {
            fs::remove_file(&failure).map_err(io_err(&failure))?;
        }
        match f() {
            Ok(v) => {
                self.write_manifest()?;
                Ok(v)
            }
            Err(e) => {
                self.record_failure(name, &e);
                Err(e)
            }
        }
    }

    fn record_failure(&self, stage: &str, e: &RunError) {
        let doc = json!({
            "config_hash": self.hash,
            "seed": self.config.seed,
            "stage": stage,
            "module": e.module(),
            "error": e.to_string(),
        });
        let dir = &self.config.output_dir;
        if let Err(w) = fs::create_dir_all(dir)
            .map_err(io_err(dir))
            .and_then(|_| write_json(&self.out(FAILURE_FILE), &doc))
        {
            log::error!("could not write failure manifest: {w}");
        }
    }

    fn write_manifest(&self) -> Result<(), RunError> {
        let root = &self.config.output_dir;
        let mut files = Vec::new();
        collect_files(root, root, &mut files)?;
        let mut artifacts = BTreeMap::new();
        for rel in files {
            if rel == Path::new(MANIFEST_FILE) || rel == Path::new(FAILURE_FILE) {
                continue;
            }
            let key = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            artifacts.insert(key, sha256_file(&root.join(&rel))?);
        }
        write_json(
            &self.out(MANIFEST_FILE),
            &json!({
                "schema_version": SCHEMA_VERSION,
                "config_hash": self.hash,
                "seed": self.config.seed,
                "artifacts": artifacts,
            }),
        )
    }

    /// Loads the dataset and checks that every template and injected
    /// variant the run needs can be derived. Writes nothing.
    pub fn validate(&self) -> Result<DatasetStats, RunError> {
        let ds = self.dataset()?;
        let count = self.config.templates.count;
        for rel in ds.relations() {
            if rel.template_count() < count {
                return Err(RunError::Config(format!(
                    "relation {} has {} templates, run uses {count}",
                    rel.id,
                    rel.template_count()
                )));
            }
            derive_injected_variants(rel, &self.config.injection)?;
        }
        if self.config.sweep.is_some() && ds.stats().one_to_one_relations == 0 {
            return Err(RunError::Config(
                "sweep needs at least one 1:1 relation".into(),
            ));
        }
        Ok(ds.stats())
    }

    /// Injected template variants for every relation, base templates
    /// excluded, in relation order.
    pub fn injected_variants(&self) -> Result<Vec<TemplateVariant>, RunError> {
        let ds = self.dataset()?;
        let mut out = Vec::new();
        for rel in ds.relations() {
            out.extend(derive_injected_variants(rel, &self.config.injection)?);
        }
        Ok(out)
    }

    pub fn render(&self) -> Result<usize, RunError> {
        self.stage("render", || {
            let ds = self.dataset()?;
            let statements = render_batch(
                &ds,
                self.config.templates.count,
                &self.config.injection.injections(),
            )?;
            write_jsonl(&self.out(STATEMENTS_FILE), &statements)?;
            Ok(statements.len())
        })
    }

    pub fn score(&self) -> Result<usize, RunError> {
        self.stage("score", || {
            let statements: Vec<RenderedStatement> =
                read_jsonl(&self.out(STATEMENTS_FILE), "render")?;
            let backend = self.config.backend.build(self.config.scoring.floor)?;
            let report = fetch_scores(
                backend.as_ref(),
                &statements,
                self.config.scoring.batch_size,
            )?;
            if !report.rejected.is_empty() {
                return Err(ScoreError::RejectedRecords(report.rejected).into());
            }
            if report.clamped > 0 {
                log::warn!("{} token logprob(s) clamped to the floor", report.clamped);
            }
            single_scorer(&report.scores)?;
            let path = self.out(SCORES_FILE);
            let mut w = create(&path)?;
            report.scores.write_jsonl(&mut w).map_err(io_err(&path))?;
            w.flush().map_err(io_err(&path))?;
            Ok(report.scores.len())
        })
    }

    fn load_scores(&self) -> Result<ScoreSet, RunError> {
        let path = self.out(SCORES_FILE);
        let file = File::open(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => RunError::MissingArtifact {
                path: path.clone(),
                stage: "score",
            },
            _ => io_err(&path)(e),
        })?;
        let ingest = Ingest {
            floor: self.config.scoring.floor,
            ..Default::default()
        };
        let got = ingest
            .read_jsonl(BufReader::new(file))
            .map_err(io_err(&path))?;
        if !got.rejected.is_empty() {
            return Err(ScoreError::RejectedRecords(got.rejected).into());
        }
        Ok(ScoreSet::from_records(got.records)?)
    }

    fn variant_keys(&self, injection_id: &Option<String>) -> Vec<VariantKey> {
        let t = self.config.templates;
        let templates: Vec<usize> = if self.config.needs_all_templates() {
            (0..t.count).collect()
        } else {
            vec![t.single_template]
        };
        templates
            .into_iter()
            .map(|template_index| VariantKey {
                template_index,
                injection_id: injection_id.clone(),
            })
            .collect()
    }

    pub fn estimate(&self) -> Result<usize, RunError> {
        self.stage("estimate", || {
            let ds = self.dataset()?;
            let scores = self.load_scores()?;
            let scorer = single_scorer(&scores)?;
            let opts = EstimatorOptions {
                template_count: self.config.templates.count,
                single_template: self.config.templates.single_template,
            };
            let mut total = 0;
            for (group, injection_id) in self.groups() {
                let keys = self.variant_keys(&injection_id);
                let vectors =
                    assemble_vectors(&scores, &ds, &keys, &scorer, self.config.scoring.reduction)?;
                let instances = group_by_instance(&vectors, &ds);
                let outcomes = evaluate_estimators(&instances, &self.config.estimators, opts)?;
                total += outcomes.len();
                write_jsonl(
                    &self.out(Path::new(OUTCOMES_DIR).join(format!("{group}.jsonl"))),
                    &outcomes,
                )?;
            }
            Ok(total)
        })
    }

    fn load_outcomes(
        &self,
        group: &str,
    ) -> Result<BTreeMap<Estimator, Vec<ConfidenceOutcome>>, RunError> {
        let path = self.out(Path::new(OUTCOMES_DIR).join(format!("{group}.jsonl")));
        let all: Vec<ConfidenceOutcome> = read_jsonl(&path, "estimate")?;
        let mut by_estimator: BTreeMap<Estimator, Vec<ConfidenceOutcome>> = BTreeMap::new();
        for o in all {
            by_estimator.entry(o.estimator).or_default().push(o);
        }
        Ok(by_estimator)
    }

    pub fn report(&self) -> Result<usize, RunError> {
        self.stage("report", || {
            let ds = self.dataset()?;
            let filters = self.filters();
            let mut summary = Vec::new();
            let mut ace_of: BTreeMap<(String, Estimator, String), Option<f64>> = BTreeMap::new();
            let groups = self.groups();
            for (group, _) in &groups {
                let outcomes = self.load_outcomes(group)?;
                for &estimator in &self.config.estimators {
                    let Some(set) = outcomes.get(&estimator) else {
                        return Err(RunError::Config(format!(
                            "outcomes for group {group} lack estimator {estimator}; rerun estimate"
                        )));
                    };
                    for filter in &filters {
                        let mut report =
                            filtered_report(set, estimator, &ds, filter, &self.config.metrics)?;
                        report.config_hash = Some(self.hash.clone());
                        report.seed = Some(self.config.seed);
                        self.write_report(group, &report)?;
                        ace_of.insert((group.clone(), estimator, filter.name.clone()), report.ace);
                        summary.push(SummaryRow {
                            group,
                            estimator: estimator.to_string(),
                            filter: &filter.name,
                            recommended: report.recommended,
                            n_total: report.n_total,
                            n_answered: report.n_answered,
                            rejection_rate: report.rejection_rate,
                            accuracy: report.accuracy,
                            ace: report.ace,
                            brier: report.brier,
                            h_score: report.h_score,
                        });
                    }
                }
            }
            let n = summary.len();
            write_csv(&self.out(SUMMARY_FILE), &summary)?;
            if groups.len() > 1 {
                let mut deltas = Vec::new();
                for (group, _) in &groups[1..] {
                    for &estimator in &self.config.estimators {
                        for filter in &filters {
                            let get =
                                |g: &str| ace_of[&(g.to_string(), estimator, filter.name.clone())];
                            let (base, inj) = (get(BASE_GROUP), get(group));
                            deltas.push(DeltaRow {
                                group,
                                estimator: estimator.to_string(),
                                filter: &filter.name,
                                ace_base: base,
                                ace_injected: inj,
                                delta: base.zip(inj).map(|(b, i)| i - b),
                            });
                        }
                    }
                }
                write_csv(&self.out(DELTAS_FILE), &deltas)?;
            }
            Ok(n)
        })
    }

    fn write_report(&self, group: &str, report: &CalibrationReport) -> Result<(), RunError> {
        let dir = self
            .out(REPORTS_DIR)
            .join(group)
            .join(report.estimator.to_string());
        let name = &report.filter;
        write_json(&dir.join(format!("{name}.json")), report)?;
        write_csv(&dir.join(format!("{name}.bins.csv")), &report.bins)?;
        write_csv(&dir.join(format!("{name}.curve.csv")), &report.curve)?;
        write_csv(&dir.join(format!("{name}.arc.csv")), &report.arc_points)
    }

    /// Option-count sweep over the 1:1 relations; `None` when the config
    /// has no sweep section.
    pub fn sweep(&self) -> Result<Option<Vec<SweepRow>>, RunError> {
        let Some(cfg) = self.config.sweep.clone() else {
            return Ok(None);
        };
        self.stage("sweep", || {
            let ds = self
                .dataset()?
                .restrict(|r| r.cardinality == Cardinality::OneToOne);
            if ds.instances().is_empty() {
                return Err(RunError::Config(
                    "sweep needs at least one 1:1 relation".into(),
                ));
            }
            let scores = self.load_scores()?;
            let scorer = single_scorer(&scores)?;
            let keys = [VariantKey::base(self.config.templates.single_template)];
            let vectors =
                assemble_vectors(&scores, &ds, &keys, &scorer, self.config.scoring.reduction)?;
            let seed = SeedStream::new(self.config.seed).child(&["sweep"]).root();
            let rows = option_count_sweep(
                &ds,
                &vectors,
                &cfg.ks,
                cfg.repeats,
                seed,
                self.config.metrics.bins,
            )?;
            write_csv(&self.out(SWEEP_FILE), &rows)?;
            Ok(Some(rows))
        })
    }

    /// Every stage in order.
    pub fn run(&self) -> Result<RunSummary, RunError> {
        self.validate()
            .inspect_err(|e| self.record_failure("validate", e))?;
        Ok(RunSummary {
            statements: self.render()?,
            score_records: self.score()?,
            outcomes: self.estimate()?,
            reports: self.report()?,
            sweep_rows: self.sweep()?.map_or(0, |r| r.len()),
        })
    }
}

fn single_scorer(scores: &ScoreSet) -> Result<String, RunError> {
    let ids: Vec<String> = scores
        .scorer_ids()
        .into_iter()
        .map(str::to_string)
        .collect();
    match ids.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(RunError::MixedScorers(ids)),
    }
}

/// Writes a simulation as a runnable bundle: `dataset/`, `scores.jsonl`
/// and a `run.toml` that scores from that file.
pub fn write_simulation(sim: &Simulation, dir: &Path, seed: u64) -> Result<PathBuf, RunError> {
    let dataset_dir = dir.join("dataset");
    save_dataset(&sim.dataset, &dataset_dir)?;
    let scores = ScoreSet::from_records(sim.score_records("simulator"))?;
    let scores_path = dir.join(SCORES_FILE);
    let mut w = create(&scores_path)?;
    scores.write_jsonl(&mut w).map_err(io_err(&scores_path))?;
    w.flush().map_err(io_err(&scores_path))?;
    let estimators = if sim.templates >= 2 {
        Estimator::STANDARD.to_vec()
    } else {
        vec![Estimator::Base, Estimator::Margin]
    };
    let config = RunConfig {
        schema_version: SCHEMA_VERSION,
        dataset: "dataset".into(),
        output_dir: "out".into(),
        seed,
        backend: BackendSpec::File {
            path: SCORES_FILE.into(),
            log_base: Default::default(),
        },
        scoring: Default::default(),
        templates: TemplateConfig {
            count: sim.templates,
            single_template: 0,
        },
        estimators,
        injection: Default::default(),
        filters: Vec::new(),
        metrics: Default::default(),
        sweep: None,
    };
    let cfg_path = dir.join("run.toml");
    let mut w = create(&cfg_path)?;
    w.write_all(config.to_toml().as_bytes())
        .map_err(io_err(&cfg_path))?;
    w.flush().map_err(io_err(&cfg_path))?;
    Ok(cfg_path)
}
