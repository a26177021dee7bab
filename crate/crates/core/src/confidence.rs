//! Confidence estimates from candidate log-likelihoods.
//!
//! Intrinsic estimates use one template:
//!
//! * **Base**: the largest softmax probability, `max_i σ(ℓ)_i`.
//! * **Margin**: the gap between the largest and second-largest
//!   probability, `σ(ℓ)_[1] − σ(ℓ)_[2]`.
//!
//! Structural-consistency estimates use `T` equivalent templates. Their
//! per-template answers are first aggregated into one answer `ŷ` (by voting
//! or by minimum/maximum Base confidence), then scored:
//!
//! * **Average**: `Σ_i 1(ỹ_i = ŷ) · C_Base(ỹ_i) / T`
//! * **Consistency**: `Σ_i 1(ỹ_i = ŷ) / T`
//!
//! A vote that does not reach its threshold rejects the instance; rejected
//! outcomes carry no confidence.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::probe_data::Dataset;
use crate::scoring::{select_answer, LogLikVector};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConfidenceError {
    #[error("instance {instance_id} has no vector for template {template_index}")]
    IncompleteCoverage {
        instance_id: String,
        template_index: usize,
    },
    #[error("instance {0}: template vectors disagree on the number of candidates")]
    RaggedVectors(String),
    #[error("vote threshold {k} outside 2..={templates}")]
    InvalidVoteThreshold { k: usize, templates: usize },
    #[error("aggregation needs at least one template outcome")]
    NoOutcomes,
    #[error("unknown estimator {0:?}")]
    UnknownEstimator(String),
}

/// Shift-stable softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Predicted index and Base confidence.
pub fn c_base(values: &[f64]) -> (usize, f64) {
    let p = softmax(values);
    let predicted = select_answer(values);
    (predicted, p[predicted])
}

/// Predicted index and Margin confidence.
pub fn c_margin(values: &[f64]) -> (usize, f64) {
    let p = softmax(values);
    let predicted = select_answer(values);
    let second = p
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != predicted)
        .map(|(_, &x)| x)
        .fold(0.0, f64::max);
    (predicted, (p[predicted] - second).max(0.0))
}

/// The answer one template gives for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateOutcome {
    pub instance_id: String,
    pub template_index: usize,
    pub predicted_index: usize,
    pub base_confidence: f64,
    pub prob_vector: Vec<f64>,
}

impl TemplateOutcome {
    pub fn from_vector(v: &LogLikVector) -> Self {
        let prob_vector = softmax(&v.values);
        let predicted_index = select_answer(&v.values);
        Self {
            instance_id: v.instance_id.clone(),
            template_index: v.template_index,
            predicted_index,
            base_confidence: prob_vector[predicted_index],
            prob_vector,
        }
    }
}

/// How per-template answers collapse into one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Aggregation {
    /// The answer of the least confident template.
    MinConfidence,
    /// The answer of the most confident template. Known to amplify
    /// overconfidence; kept for comparison.
    MaxConfidence,
    /// The most frequent answer, if at least `k` templates give it.
    Vote(usize),
}

impl Aggregation {
    pub const PLURALITY: Aggregation = Aggregation::Vote(2);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregateStatus {
    Answered(usize),
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aggregated {
    pub status: AggregateStatus,
    /// Positions (into the outcome slice) of templates whose answer equals
    /// the aggregated answer.
    pub selected: Vec<usize>,
    /// Several answers shared the top vote count.
    pub tie: bool,
}

pub fn aggregate(
    outcomes: &[TemplateOutcome],
    strategy: Aggregation,
) -> Result<Aggregated, ConfidenceError> {
    if outcomes.is_empty() {
        return Err(ConfidenceError::NoOutcomes);
    }
    let by_confidence = |pick_max: bool| {
        let mut best = 0;
        for (i, o) in outcomes.iter().enumerate().skip(1) {
            let b = &outcomes[best];
            let better = if pick_max {
                o.base_confidence > b.base_confidence
            } else {
                o.base_confidence < b.base_confidence
            };
            let same_but_earlier =
                o.base_confidence == b.base_confidence && o.template_index < b.template_index;
            if better || same_but_earlier {
                best = i;
            }
        }
        outcomes[best].predicted_index
    };
    let (status, tie) = match strategy {
        Aggregation::MinConfidence => (AggregateStatus::Answered(by_confidence(false)), false),
        Aggregation::MaxConfidence => (AggregateStatus::Answered(by_confidence(true)), false),
        Aggregation::Vote(k) => {
            if k < 2 || k > outcomes.len() {
                return Err(ConfidenceError::InvalidVoteThreshold {
                    k,
                    templates: outcomes.len(),
                });
            }
            // answer -> (count, summed base confidence)
            let mut tally: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
            for o in outcomes {
                let e = tally.entry(o.predicted_index).or_insert((0, 0.0));
                e.0 += 1;
                e.1 += o.base_confidence;
            }
            let top = tally.values().map(|e| e.0).max().unwrap();
            let tied: Vec<(usize, f64)> = tally
                .iter()
                .filter(|(_, e)| e.0 == top)
                .map(|(&a, e)| (a, e.1))
                .collect();
            // BTreeMap order makes the first maximum the lowest index
            let winner = tied
                .iter()
                .fold(
                    tied[0],
                    |best, &cur| if cur.1 > best.1 { cur } else { best },
                )
                .0;
            let status = if top >= k {
                AggregateStatus::Answered(winner)
            } else {
                AggregateStatus::Rejected
            };
            (status, tied.len() > 1)
        }
    };
    let selected = match status {
        AggregateStatus::Answered(y) => outcomes
            .iter()
            .enumerate()
            .filter(|(_, o)| o.predicted_index == y)
            .map(|(i, _)| i)
            .collect(),
        AggregateStatus::Rejected => Vec::new(),
    };
    Ok(Aggregated {
        status,
        selected,
        tie,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Status {
    Answered {
        predicted_index: usize,
        confidence: f64,
    },
    Rejected,
}

impl Status {
    pub fn confidence(&self) -> Option<f64> {
        match self {
            Status::Answered { confidence, .. } => Some(*confidence),
            Status::Rejected => None,
        }
    }

    pub fn predicted(&self) -> Option<usize> {
        match self {
            Status::Answered {
                predicted_index, ..
            } => Some(*predicted_index),
            Status::Rejected => None,
        }
    }
}

/// Average confidence of the aggregated answer over all `T` templates.
pub fn c_average(outcomes: &[TemplateOutcome], aggregated: &Aggregated) -> Status {
    match aggregated.status {
        AggregateStatus::Rejected => Status::Rejected,
        AggregateStatus::Answered(y) => {
            let total: f64 = aggregated
                .selected
                .iter()
                .map(|&i| outcomes[i].base_confidence)
                .sum();
            Status::Answered {
                predicted_index: y,
                confidence: total / outcomes.len() as f64,
            }
        }
    }
}

/// Fraction of the `T` templates that agree with the aggregated answer.
pub fn c_consistency(outcomes: &[TemplateOutcome], aggregated: &Aggregated) -> Status {
    match aggregated.status {
        AggregateStatus::Rejected => Status::Rejected,
        AggregateStatus::Answered(y) => Status::Answered {
            predicted_index: y,
            confidence: aggregated.selected.len() as f64 / outcomes.len() as f64,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Estimator {
    Base,
    Margin,
    Average(Aggregation),
    Consistency(Aggregation),
}

impl Estimator {
    /// Base, Margin, and Average/Consistency under plurality vote and
    /// minimum-confidence aggregation.
    pub const STANDARD: [Estimator; 6] = [
        Estimator::Base,
        Estimator::Margin,
        Estimator::Average(Aggregation::PLURALITY),
        Estimator::Average(Aggregation::MinConfidence),
        Estimator::Consistency(Aggregation::PLURALITY),
        Estimator::Consistency(Aggregation::MinConfidence),
    ];

    pub fn is_single_template(&self) -> bool {
        matches!(self, Estimator::Base | Estimator::Margin)
    }

    /// Maximum-confidence aggregation is evaluated but not recommended.
    pub fn is_recommended(&self) -> bool {
        !matches!(
            self,
            Estimator::Average(Aggregation::MaxConfidence)
                | Estimator::Consistency(Aggregation::MaxConfidence)
        )
    }

    pub fn aggregation(&self) -> Option<Aggregation> {
        match self {
            Estimator::Average(a) | Estimator::Consistency(a) => Some(*a),
            _ => None,
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let agg = |a: &Aggregation| match a {
            Aggregation::MinConfidence => "min".to_string(),
            Aggregation::MaxConfidence => "max".to_string(),
            Aggregation::Vote(2) => "vote".to_string(),
            Aggregation::Vote(k) => format!("vote{k}"),
        };
        match self {
            Estimator::Base => f.write_str("base"),
            Estimator::Margin => f.write_str("margin"),
            Estimator::Average(a) => write!(f, "average_{}", agg(a)),
            Estimator::Consistency(a) => write!(f, "consistency_{}", agg(a)),
        }
    }
}

impl FromStr for Estimator {
    type Err = ConfidenceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || ConfidenceError::UnknownEstimator(s.to_string());
        let agg = |a: &str| -> Result<Aggregation, ConfidenceError> {
            match a {
                "min" => Ok(Aggregation::MinConfidence),
                "max" => Ok(Aggregation::MaxConfidence),
                "vote" => Ok(Aggregation::PLURALITY),
                v => v
                    .strip_prefix("vote")
                    .and_then(|k| k.parse().ok())
                    .filter(|&k| k >= 2)
                    .map(Aggregation::Vote)
                    .ok_or_else(unknown),
            }
        };
        match s {
            "base" => Ok(Estimator::Base),
            "margin" => Ok(Estimator::Margin),
            _ => {
                if let Some(a) = s.strip_prefix("average_") {
                    Ok(Estimator::Average(agg(a)?))
                } else if let Some(a) = s.strip_prefix("consistency_") {
                    Ok(Estimator::Consistency(agg(a)?))
                } else {
                    Err(unknown())
                }
            }
        }
    }
}

impl From<Estimator> for String {
    fn from(e: Estimator) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Estimator {
    type Error = ConfidenceError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Final confidence of one estimator on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceOutcome {
    pub instance_id: String,
    pub estimator: Estimator,
    #[serde(flatten)]
    pub status: Status,
    /// Whether the answer matches the gold object; unset for rejections and
    /// when gold is unknown.
    pub correct: Option<bool>,
    #[serde(default)]
    pub tie: bool,
}

impl ConfidenceOutcome {
    pub fn confidence(&self) -> Option<f64> {
        self.status.confidence()
    }

    pub fn is_answered(&self) -> bool {
        matches!(self.status, Status::Answered { .. })
    }
}

/// Template vectors of one instance under one injection group.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceVectors {
    pub instance_id: String,
    pub gold_index: Option<usize>,
    pub vectors: Vec<LogLikVector>,
}

/// Groups vectors by instance in dataset order, attaching gold indices.
/// Vectors of instances unknown to the dataset are dropped.
pub fn group_by_instance(vectors: &[LogLikVector], dataset: &Dataset) -> Vec<InstanceVectors> {
    let mut by_id: BTreeMap<&str, Vec<LogLikVector>> = BTreeMap::new();
    for v in vectors {
        by_id.entry(&v.instance_id).or_default().push(v.clone());
    }
    dataset
        .instances()
        .iter()
        .filter_map(|inst| {
            by_id
                .remove(inst.id.as_str())
                .map(|vectors| InstanceVectors {
                    instance_id: inst.id.clone(),
                    gold_index: Some(inst.gold_index),
                    vectors,
                })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Number of templates `T` used by structural-consistency estimators.
    pub template_count: usize,
    /// Template used by Base and Margin.
    pub single_template: usize,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            template_count: 5,
            single_template: 0,
        }
    }
}

fn estimate_instance(
    inst: &InstanceVectors,
    estimators: &[Estimator],
    opts: EstimatorOptions,
) -> Result<Vec<ConfidenceOutcome>, ConfidenceError> {
    let find = |t: usize| {
        inst.vectors
            .iter()
            .find(|v| v.template_index == t)
            .ok_or_else(|| ConfidenceError::IncompleteCoverage {
                instance_id: inst.instance_id.clone(),
                template_index: t,
            })
    };
    let needs_all = estimators.iter().any(|e| !e.is_single_template());
    let outcomes: Vec<TemplateOutcome> = if needs_all {
        (0..opts.template_count)
            .map(|t| find(t).map(TemplateOutcome::from_vector))
            .collect::<Result<_, _>>()?
    } else {
        Vec::new()
    };
    if outcomes
        .windows(2)
        .any(|w| w[0].prob_vector.len() != w[1].prob_vector.len())
    {
        return Err(ConfidenceError::RaggedVectors(inst.instance_id.clone()));
    }
    let mut out = Vec::with_capacity(estimators.len());
    for &estimator in estimators {
        let (status, tie) = match estimator {
            Estimator::Base | Estimator::Margin => {
                let v = find(opts.single_template)?;
                let (predicted_index, confidence) = if estimator == Estimator::Base {
                    c_base(&v.values)
                } else {
                    c_margin(&v.values)
                };
                (
                    Status::Answered {
                        predicted_index,
                        confidence,
                    },
                    false,
                )
            }
            Estimator::Average(a) | Estimator::Consistency(a) => {
                let agg = aggregate(&outcomes, a)?;
                let status = if matches!(estimator, Estimator::Average(_)) {
                    c_average(&outcomes, &agg)
                } else {
                    c_consistency(&outcomes, &agg)
                };
                (status, agg.tie)
            }
        };
        let correct = match (status.predicted(), inst.gold_index) {
            (Some(p), Some(g)) => Some(p == g),
            _ => None,
        };
        out.push(ConfidenceOutcome {
            instance_id: inst.instance_id.clone(),
            estimator,
            status,
            correct,
            tie,
        });
    }
    Ok(out)
}

/// Runs every estimator on every instance. Output is estimator-major, with
/// instances in input order inside each estimator block.
pub fn evaluate_estimators(
    instances: &[InstanceVectors],
    estimators: &[Estimator],
    opts: EstimatorOptions,
) -> Result<Vec<ConfidenceOutcome>, ConfidenceError> {
    for e in estimators {
        if let Some(Aggregation::Vote(k)) = e.aggregation() {
            if k < 2 || k > opts.template_count {
                return Err(ConfidenceError::InvalidVoteThreshold {
                    k,
                    templates: opts.template_count,
                });
            }
        }
    }
    let per_instance: Vec<Vec<ConfidenceOutcome>> = instances
        .par_iter()
        .map(|inst| estimate_instance(inst, estimators, opts))
        .collect::<Result<_, _>>()?;
    let mut out = Vec::with_capacity(instances.len() * estimators.len());
    for e in 0..estimators.len() {
        out.extend(per_instance.iter().map(|row| row[e].clone()));
    }
    Ok(out)
}
