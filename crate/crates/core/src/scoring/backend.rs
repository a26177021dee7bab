//! Score backends: a wire-format file, an HTTP scorer, and a deterministic
//! mock used in tests and demos.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::wire::{Ingest, Ingested, LogBase};
use super::{Rejection, ScoreError, ScoreRecord, ScoreSet, ScoringMode, SpanRole, TokenScore};
use crate::probe_data::{Dataset, Injection, ProbeDataError, Span, TemplateVariant};

/// Overrides the HTTP backend endpoint from the configuration.
pub const ENDPOINT_ENV: &str = "CALPROBE_SCORER_ENDPOINT";

/// One candidate statement sent to a scorer. Span offsets count characters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedStatement {
    pub id: String,
    pub instance_id: String,
    pub template_index: usize,
    pub injection_id: Option<String>,
    pub candidate_index: usize,
    pub text: String,
    pub spans: Vec<Span>,
}

type StatementKey = (String, usize, Option<String>, usize);

impl RenderedStatement {
    fn key(&self) -> StatementKey {
        (
            self.instance_id.clone(),
            self.template_index,
            self.injection_id.clone(),
            self.candidate_index,
        )
    }
}

fn record_statement_key(r: &ScoreRecord) -> StatementKey {
    (
        r.instance_id.clone(),
        r.template_index,
        r.injection_id.clone(),
        r.candidate_index,
    )
}

/// Renders every (instance, injection group, template, candidate) statement.
/// The uninjected group comes first, then `injections` in order.
pub fn render_batch(
    dataset: &Dataset,
    template_count: usize,
    injections: &[Injection],
) -> Result<Vec<RenderedStatement>, ProbeDataError> {
    let groups: Vec<Injection> = std::iter::once(Injection::None)
        .chain(injections.iter().filter(|i| !i.is_none()).cloned())
        .collect();
    let mut variants: BTreeMap<&str, Vec<Vec<TemplateVariant>>> = BTreeMap::new();
    for rel in dataset.relations() {
        if rel.template_count() < template_count {
            return Err(ProbeDataError::InvalidVariant(format!(
                "relation {} has {} templates, run asks for {template_count}",
                rel.id,
                rel.template_count()
            )));
        }
        let per_group = groups
            .iter()
            .map(|inj| {
                rel.templates[..template_count]
                    .iter()
                    .map(|t| t.derive(inj))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        variants.insert(&rel.id, per_group);
    }
    let mut out = Vec::new();
    for inst in dataset.instances() {
        for (group, injection) in groups.iter().enumerate() {
            let injection_id = injection.id();
            for variant in &variants[inst.relation_id.as_str()][group] {
                for (candidate_index, object) in inst.candidates.iter().enumerate() {
                    let rendered = variant.render_with_spans(&inst.subject, object);
                    out.push(RenderedStatement {
                        id: format!(
                            "{}#{}#{}#{}",
                            inst.id,
                            variant.index(),
                            injection_id.as_deref().unwrap_or("base"),
                            candidate_index
                        ),
                        instance_id: inst.id.clone(),
                        template_index: variant.index(),
                        injection_id: injection_id.clone(),
                        candidate_index,
                        text: rendered.text,
                        spans: rendered.spans,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Records returned for one batch, plus those refused at ingestion.
#[derive(Debug, Default)]
pub struct BatchScores {
    pub records: Vec<ScoreRecord>,
    pub rejected: Vec<Rejection>,
    pub clamped: usize,
}

impl From<Ingested> for BatchScores {
    fn from(i: Ingested) -> Self {
        Self {
            records: i.records,
            rejected: i.rejected,
            clamped: i.clamped,
        }
    }
}

pub trait ScoreBackend: Send + Sync {
    fn fetch(
        &self,
        batch_id: &str,
        statements: &[RenderedStatement],
    ) -> Result<BatchScores, ScoreError>;
}

/// Backend selection as written in a run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendSpec {
    File {
        path: PathBuf,
        #[serde(default)]
        log_base: LogBase,
    },
    Http {
        endpoint: String,
        #[serde(default)]
        log_base: LogBase,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
    Mock {
        seed: u64,
    },
}

fn default_timeout() -> u64 {
    120
}

impl BackendSpec {
    pub fn build(&self, floor: f64) -> Result<Box<dyn ScoreBackend>, ScoreError> {
        Ok(match self {
            BackendSpec::File { path, log_base } => Box::new(FileBackend::open(
                path.clone(),
                Ingest {
                    floor,
                    log_base: *log_base,
                },
            )?),
            BackendSpec::Http {
                endpoint,
                log_base,
                timeout_secs,
            } => {
                let endpoint = std::env::var(ENDPOINT_ENV).unwrap_or_else(|_| endpoint.clone());
                Box::new(HttpBackend::new(
                    endpoint,
                    Ingest {
                        floor,
                        log_base: *log_base,
                    },
                    Duration::from_secs(*timeout_secs),
                ))
            }
            BackendSpec::Mock { seed } => Box::new(MockBackend::new(*seed)),
        })
    }
}

/// Serves records from a wire-format file. With an empty request every
/// record in the file is returned.
pub struct FileBackend {
    path: PathBuf,
    ingested: BatchScores,
}

impl FileBackend {
    pub fn open(path: PathBuf, ingest: Ingest) -> Result<Self, ScoreError> {
        let io = |source| ScoreError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::open(&path).map_err(io)?;
        let ingested = ingest.read_jsonl(BufReader::new(file)).map_err(io)?;
        Ok(Self {
            path,
            ingested: ingested.into(),
        })
    }

    pub fn path(&self) -> &std::path::Path {
        &self.path
    }
}

impl ScoreBackend for FileBackend {
    fn fetch(
        &self,
        _batch_id: &str,
        statements: &[RenderedStatement],
    ) -> Result<BatchScores, ScoreError> {
        if statements.is_empty() {
            return Ok(BatchScores {
                records: self.ingested.records.clone(),
                rejected: self.ingested.rejected.clone(),
                clamped: self.ingested.clamped,
            });
        }
        let wanted: HashSet<StatementKey> = statements.iter().map(RenderedStatement::key).collect();
        Ok(BatchScores {
            records: self
                .ingested
                .records
                .iter()
                .filter(|r| wanted.contains(&record_statement_key(r)))
                .cloned()
                .collect(),
            rejected: Vec::new(),
            clamped: 0,
        })
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    batch_id: &'a str,
    statements: &'a [RenderedStatement],
}

/// Posts batches to `{endpoint}/score`; requests are idempotent per batch id.
pub struct HttpBackend {
    endpoint: String,
    ingest: Ingest,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(endpoint: String, ingest: Ingest, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            ingest,
            agent,
        }
    }
}

impl ScoreBackend for HttpBackend {
    fn fetch(
        &self,
        batch_id: &str,
        statements: &[RenderedStatement],
    ) -> Result<BatchScores, ScoreError> {
        let transport = |message: String| ScoreError::Transport {
            batch_id: batch_id.to_string(),
            message,
        };
        let body = serde_json::to_string(&ScoreRequest {
            batch_id,
            statements,
        })
        .expect("request serializes");
        let mut response = self
            .agent
            .post(&format!("{}/score", self.endpoint))
            .header("content-type", "application/json")
            .send(&body)
            .map_err(|e| transport(e.to_string()))?;
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(e.to_string()))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| transport(format!("bad response: {e}")))?;
        match value.get("batch_id").and_then(Value::as_str) {
            Some(id) if id == batch_id => {}
            other => return Err(transport(format!("response for batch {other:?}"))),
        }
        let records = match value.get_mut("records").map(Value::take) {
            Some(Value::Array(items)) => items,
            _ => return Err(transport("response lacks a records array".into())),
        };
        let mut out = Ingested::default();
        for (pos, item) in records.into_iter().enumerate() {
            self.ingest.push_value(item, pos, &mut out);
        }
        Ok(out.into())
    }
}

/// Deterministic pseudo-scores keyed by (statement text, seed). One token per
/// whitespace-separated word inside each span.
pub struct MockBackend {
    seed: u64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn scorer_id(&self) -> String {
        format!("mock-{}", self.seed)
    }

    fn unit(&self, text: &str, position: usize) -> f64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update((position as u64).to_le_bytes());
        h.update(text.as_bytes());
        let d = h.finalize();
        let x = u64::from_le_bytes(d[..8].try_into().unwrap());
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn score(&self, s: &RenderedStatement) -> ScoreRecord {
        let chars: Vec<char> = s.text.chars().collect();
        let mut tokens = Vec::new();
        for span in &s.spans {
            let piece: String = chars[span.start..span.end].iter().collect();
            for word in piece.split_whitespace() {
                let lp = -(0.05 + 8.0 * self.unit(&s.text, tokens.len()));
                tokens.push(TokenScore::new(word, lp, span.role));
            }
        }
        ScoreRecord {
            instance_id: s.instance_id.clone(),
            template_index: s.template_index,
            injection_id: s.injection_id.clone(),
            candidate_index: s.candidate_index,
            tokens,
            scorer_id: self.scorer_id(),
            scoring_mode: ScoringMode::CausalSum,
        }
    }
}

impl ScoreBackend for MockBackend {
    fn fetch(
        &self,
        _batch_id: &str,
        statements: &[RenderedStatement],
    ) -> Result<BatchScores, ScoreError> {
        let mut out = BatchScores::default();
        for s in statements {
            let r = self.score(s);
            if r.tokens.iter().any(|t| t.span_role == SpanRole::Answer) {
                out.records.push(r);
            } else {
                out.rejected.push(Rejection {
                    position: out.records.len() + out.rejected.len(),
                    instance_id: Some(s.instance_id.clone()),
                    reason: "answer span has no word".into(),
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Default)]
pub struct FetchReport {
    pub scores: ScoreSet,
    pub rejected: Vec<Rejection>,
    pub clamped: usize,
}

/// Polls `backend` batch by batch (batches in parallel) and merges the
/// results in batch order into one score set.
pub fn fetch_scores(
    backend: &dyn ScoreBackend,
    statements: &[RenderedStatement],
    batch_size: usize,
) -> Result<FetchReport, ScoreError> {
    let batch_size = batch_size.max(1);
    let batches: Vec<Result<BatchScores, ScoreError>> = if statements.is_empty() {
        vec![backend.fetch("b000000", &[])]
    } else {
        statements
            .par_chunks(batch_size)
            .enumerate()
            .map(|(n, chunk)| backend.fetch(&format!("b{n:06}"), chunk))
            .collect()
    };
    let mut report = FetchReport::default();
    for batch in batches {
        let batch = batch?;
        report.clamped += batch.clamped;
        report.rejected.extend(batch.rejected);
        for r in batch.records {
            report.scores.insert(r)?;
        }
    }
    Ok(report)
}
