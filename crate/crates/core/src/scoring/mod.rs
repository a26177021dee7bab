//! Per-candidate token log-likelihoods and their reduction to sentence scores.
//!
//! Scores arrive as [`ScoreRecord`]s (one per instance, template, injection
//! and candidate) from a [`ScoreBackend`], are collected in a [`ScoreSet`],
//! and are reduced and assembled into one [`LogLikVector`] per instance and
//! template variant. All log-likelihoods are natural-log.

mod backend;
mod wire;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use backend::{
    fetch_scores, render_batch, BackendSpec, BatchScores, FetchReport, FileBackend, HttpBackend,
    MockBackend, RenderedStatement, ScoreBackend, ENDPOINT_ENV,
};
pub use wire::{Ingest, Ingested, LogBase, Rejection, DEFAULT_LOGPROB_FLOOR};

use crate::probe_data::Dataset;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("record {0} has no answer tokens")]
    NoAnswerTokens(String),
    #[error("malformed record {key}: {reason}")]
    MalformedRecord { key: String, reason: String },
    #[error("duplicate score record {0}")]
    DuplicateRecord(String),
    #[error("score set is missing {} record(s): {}", .0.len(), preview(.0))]
    IncompleteCoverage(Vec<MissingTriple>),
    #[error("batch {batch_id}: {message}")]
    Transport { batch_id: String, message: String },
    #[error("{} record(s) rejected at ingestion, instances: {}", .0.len(), rejected_ids(.0))]
    RejectedRecords(Vec<Rejection>),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn preview(missing: &[MissingTriple]) -> String {
    let mut s: Vec<String> = missing.iter().take(5).map(|m| m.to_string()).collect();
    if missing.len() > 5 {
        s.push("...".into());
    }
    s.join(", ")
}

fn rejected_ids(rejected: &[Rejection]) -> String {
    let ids: BTreeSet<&str> = rejected
        .iter()
        .map(|r| r.instance_id.as_deref().unwrap_or("<unknown>"))
        .collect();
    ids.into_iter().collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanRole {
    Subject,
    TemplateText,
    Answer,
    Injection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    CausalSum,
    PseudoLogLikelihood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_text: String,
    pub logprob: f64,
    pub span_role: SpanRole,
    /// First causal token scored without any conditioning context.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_context: bool,
}

impl TokenScore {
    pub fn new(token_text: impl Into<String>, logprob: f64, span_role: SpanRole) -> Self {
        Self {
            token_text: token_text.into(),
            logprob,
            span_role,
            no_context: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub instance_id: String,
    pub template_index: usize,
    pub injection_id: Option<String>,
    pub candidate_index: usize,
    pub tokens: Vec<TokenScore>,
    pub scorer_id: String,
    pub scoring_mode: ScoringMode,
}

/// Uniqueness key of a record within a score set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RecordKey {
    pub scorer_id: String,
    pub instance_id: String,
    pub template_index: usize,
    pub injection_id: Option<String>,
    pub candidate_index: usize,
}

impl std::fmt::Display for RecordKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, template {}, {}, candidate {}, {})",
            self.instance_id,
            self.template_index,
            self.injection_id.as_deref().unwrap_or("base"),
            self.candidate_index,
            self.scorer_id
        )
    }
}

impl ScoreRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            scorer_id: self.scorer_id.clone(),
            instance_id: self.instance_id.clone(),
            template_index: self.template_index,
            injection_id: self.injection_id.clone(),
            candidate_index: self.candidate_index,
        }
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        let malformed = |reason: &str| ScoreError::MalformedRecord {
            key: self.key().to_string(),
            reason: reason.to_string(),
        };
        if self.tokens.is_empty() {
            return Err(malformed("no tokens"));
        }
        if !self.tokens.iter().any(|t| t.span_role == SpanRole::Answer) {
            return Err(malformed("no answer-role token"));
        }
        if self.tokens.iter().any(|t| !t.logprob.is_finite()) {
            return Err(malformed("non-finite logprob"));
        }
        Ok(())
    }
}

/// Token log-likelihood reduction strategy.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Sum over every token of the statement.
    #[default]
    Sum,
    Mean,
    /// Sum over object tokens only.
    SumAnswer,
    MeanAnswer,
}

/// Collapses a record's token log-likelihoods into one sentence score.
/// Injection tokens take part in `Sum`/`Mean`, never in the answer-only
/// strategies.
pub fn reduce(record: &ScoreRecord, strategy: Reduction) -> Result<f64, ScoreError> {
    let (sum, n) = match strategy {
        Reduction::Sum | Reduction::Mean => (
            record.tokens.iter().map(|t| t.logprob).sum::<f64>(),
            record.tokens.len(),
        ),
        Reduction::SumAnswer | Reduction::MeanAnswer => record
            .tokens
            .iter()
            .filter(|t| t.span_role == SpanRole::Answer)
            .fold((0.0, 0), |(s, n), t| (s + t.logprob, n + 1)),
    };
    if n == 0 {
        return Err(match strategy {
            Reduction::SumAnswer | Reduction::MeanAnswer => {
                ScoreError::NoAnswerTokens(record.key().to_string())
            }
            _ => ScoreError::MalformedRecord {
                key: record.key().to_string(),
                reason: "no tokens".into(),
            },
        });
    }
    Ok(match strategy {
        Reduction::Sum | Reduction::SumAnswer => sum,
        Reduction::Mean | Reduction::MeanAnswer => sum / n as f64,
    })
}

/// Records keyed by [`RecordKey`], duplicates refused.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    records: BTreeMap<RecordKey, ScoreRecord>,
}

impl ScoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(
        records: impl IntoIterator<Item = ScoreRecord>,
    ) -> Result<Self, ScoreError> {
        let mut set = Self::new();
        for r in records {
            set.insert(r)?;
        }
        Ok(set)
    }

    pub fn insert(&mut self, record: ScoreRecord) -> Result<(), ScoreError> {
        record.validate()?;
        let key = record.key();
        if self.records.contains_key(&key) {
            return Err(ScoreError::DuplicateRecord(key.to_string()));
        }
        self.records.insert(key, record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, key: &RecordKey) -> Option<&ScoreRecord> {
        self.records.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScoreRecord> {
        self.records.values()
    }

    pub fn scorer_ids(&self) -> BTreeSet<&str> {
        self.records.keys().map(|k| k.scorer_id.as_str()).collect()
    }

    /// Writes one JSON record per line, in key order.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for r in self.records.values() {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// A (template, injection) pair the run asks scores for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VariantKey {
    pub template_index: usize,
    pub injection_id: Option<String>,
}

impl VariantKey {
    pub fn base(template_index: usize) -> Self {
        Self {
            template_index,
            injection_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingTriple {
    pub instance_id: String,
    pub template_index: usize,
    pub injection_id: Option<String>,
    pub candidate_index: usize,
}

impl std::fmt::Display for MissingTriple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "({}, template {}, {}, candidate {})",
            self.instance_id,
            self.template_index,
            self.injection_id.as_deref().unwrap_or("base"),
            self.candidate_index
        )
    }
}

/// Candidate log-likelihoods of one instance under one template variant,
/// aligned with the instance's candidate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikVector {
    pub instance_id: String,
    pub template_index: usize,
    pub injection_id: Option<String>,
    pub values: Vec<f64>,
    pub reduction: Reduction,
}

impl LogLikVector {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn select_answer(&self) -> usize {
        select_answer(&self.values)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn select_answer(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Builds one vector per (instance, variant) in dataset order. Fails closed:
/// if any (instance, variant, candidate) triple lacks a record, every missing
/// triple is reported and no vectors are returned.
pub fn assemble_vectors(
    scores: &ScoreSet,
    dataset: &Dataset,
    variants: &[VariantKey],
    scorer_id: &str,
    strategy: Reduction,
) -> Result<Vec<LogLikVector>, ScoreError> {
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(dataset.instances().len() * variants.len());
    for inst in dataset.instances() {
        for variant in variants {
            let mut values = Vec::with_capacity(inst.k());
            for candidate_index in 0..inst.k() {
                let key = RecordKey {
                    scorer_id: scorer_id.to_string(),
                    instance_id: inst.id.clone(),
                    template_index: variant.template_index,
                    injection_id: variant.injection_id.clone(),
                    candidate_index,
                };
                match scores.get(&key) {
                    Some(record) => values.push(reduce(record, strategy)?),
                    None => missing.push(MissingTriple {
                        instance_id: inst.id.clone(),
                        template_index: variant.template_index,
                        injection_id: variant.injection_id.clone(),
                        candidate_index,
                    }),
                }
            }
            if missing.is_empty() {
                out.push(LogLikVector {
                    instance_id: inst.id.clone(),
                    template_index: variant.template_index,
                    injection_id: variant.injection_id.clone(),
                    values,
                    reduction: strategy,
                });
            }
        }
    }
    if !missing.is_empty() {
        return Err(ScoreError::IncompleteCoverage(missing));
    }
    Ok(out)
}
