//! Synthetic answerers with known calibration, for tests and demos.
//!
//! A profile simulation draws, per instance, a confidence `c ~ U(1/K, 1)`
//! and a predicted option. The template vector gives the prediction
//! probability `c` and spreads `1 − c` evenly over the other options, so
//! Base confidence recovers `c`. Correctness is then drawn with a
//! probability that depends on the profile, and the gold index is placed
//! accordingly.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confidence::{
    evaluate_estimators, ConfidenceError, ConfidenceOutcome, Estimator, EstimatorOptions,
    InstanceVectors,
};
use crate::probe_data::{Cardinality, Dataset, ProbeDataError, ProbeInstance, Relation};
use crate::scoring::{LogLikVector, Reduction, ScoreRecord, ScoringMode, SpanRole, TokenScore};
use crate::seed::SeedStream;

pub const SIM_RELATION: &str = "SIM";

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("invalid simulator spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Dataset(#[from] ProbeDataError),
    #[error(transparent)]
    Confidence(#[from] ConfidenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// Correct with probability `c`.
    Calibrated,
    /// Correct with probability `max(0, c − delta)`.
    Overconfident { delta: f64 },
    /// Correct with probability `min(1, c + delta)`.
    Underconfident { delta: f64 },
    /// Calibrated template 0; each other template independently moves its
    /// argmax to another option with probability `p_flip`.
    TemplateNoisy { p_flip: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulatorSpec {
    pub n_instances: usize,
    pub k: usize,
    pub templates: usize,
    pub profile: Profile,
    pub seed: u64,
}

impl SimulatorSpec {
    pub fn validate(&self) -> Result<(), SimulateError> {
        let bad = |m: String| Err(SimulateError::InvalidSpec(m));
        if self.n_instances == 0 {
            return bad("n_instances must be positive".into());
        }
        if self.k < 2 {
            return bad(format!("k = {} (need at least 2)", self.k));
        }
        if self.templates == 0 {
            return bad("templates must be positive".into());
        }
        let p = match self.profile {
            Profile::Calibrated => 0.0,
            Profile::Overconfident { delta } | Profile::Underconfident { delta } => delta,
            Profile::TemplateNoisy { p_flip } => p_flip,
        };
        if !(0.0..=1.0).contains(&p) {
            return bad(format!("profile parameter {p} outside [0, 1]"));
        }
        Ok(())
    }
}

/// A synthetic dataset with one log-likelihood vector per (instance,
/// template).
#[derive(Debug, Clone)]
pub struct Simulation {
    pub dataset: Dataset,
    /// Instance-major, template-minor.
    pub vectors: Vec<LogLikVector>,
    pub templates: usize,
}

fn sim_dataset(
    n: usize,
    k: usize,
    templates: usize,
    cardinality: Cardinality,
    golds: &[usize],
) -> Result<Dataset, ProbeDataError> {
    let patterns: Vec<String> = (0..templates)
        .map(|t| format!("[X] is linked to [Y] (form {t})."))
        .collect();
    let rel = Relation::new(SIM_RELATION, cardinality, &patterns, ["synthetic"])?;
    let candidates: Vec<String> = (0..k).map(|j| format!("option{j:02}")).collect();
    let instances = (0..n)
        .map(|i| ProbeInstance {
            id: format!("sim{i:06}"),
            relation_id: SIM_RELATION.into(),
            subject: format!("subject{i}"),
            gold_index: golds[i],
            candidates: candidates.clone(),
        })
        .collect();
    Dataset::new([rel], instances, Default::default())
}

fn other_index(rng: &mut impl Rng, k: usize, not: usize) -> usize {
    let j = rng.random_range(0..k - 1);
    if j >= not {
        j + 1
    } else {
        j
    }
}

/// Draws a simulation; fully determined by `spec`.
pub fn simulate(spec: &SimulatorSpec) -> Result<Simulation, SimulateError> {
    spec.validate()?;
    let k = spec.k;
    let stream = SeedStream::new(spec.seed).child(&["simulator"]);
    let drawn: Vec<(usize, Vec<Vec<f64>>)> = (0..spec.n_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.rng_for(&["instance", &i.to_string()]);
            let c: f64 = rng.random_range(1.0 / k as f64..1.0);
            let pred = rng.random_range(0..k);
            let p_correct = match spec.profile {
                Profile::Calibrated | Profile::TemplateNoisy { .. } => c,
                Profile::Overconfident { delta } => (c - delta).max(0.0),
                Profile::Underconfident { delta } => (c + delta).min(1.0),
            };
            let gold = if rng.random_bool(p_correct) {
                pred
            } else {
                other_index(&mut rng, k, pred)
            };
            let rest = ((1.0 - c) / (k - 1) as f64).ln();
            let mut base = vec![rest; k];
            base[pred] = c.ln();
            let mut vectors = Vec::with_capacity(spec.templates);
            vectors.push(base.clone());
            for _ in 1..spec.templates {
                let mut v = base.clone();
                // one uniform per template keeps flip sets nested across p_flip
                let u: f64 = rng.random();
                let target = other_index(&mut rng, k, pred);
                if let Profile::TemplateNoisy { p_flip } = spec.profile {
                    if u < p_flip {
                        v.swap(pred, target);
                    }
                }
                vectors.push(v);
            }
            (gold, vectors)
        })
        .collect();
    let golds: Vec<usize> = drawn.iter().map(|(g, _)| *g).collect();
    let dataset = sim_dataset(
        spec.n_instances,
        k,
        spec.templates,
        Cardinality::NToOne,
        &golds,
    )?;
    let vectors = to_vectors(&dataset, drawn.into_iter().map(|(_, v)| v));
    Ok(Simulation {
        dataset,
        vectors,
        templates: spec.templates,
    })
}

fn to_vectors(
    dataset: &Dataset,
    per_instance: impl Iterator<Item = Vec<Vec<f64>>>,
) -> Vec<LogLikVector> {
    dataset
        .instances()
        .iter()
        .zip(per_instance)
        .flat_map(|(inst, vs)| {
            vs.into_iter().enumerate().map(|(t, values)| LogLikVector {
                instance_id: inst.id.clone(),
                template_index: t,
                injection_id: None,
                values,
                reduction: Reduction::Sum,
            })
        })
        .collect()
}

/// Log-likelihood model of a synthetic single-template scorer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerModel {
    /// Every option scores 0.
    Uniform,
    /// `ℓ_j = sharpness · (signal · 1[j = gold] + z_j)` with `z_j ~ N(0, 1)`.
    /// Calibrated when `sharpness = signal`, overconfident above.
    Gaussian { signal: f64, sharpness: f64 },
    /// Each option independently scores 0 with probability `plausible`
    /// and `-gap` otherwise, regardless of gold. Accuracy is `1/k` while
    /// confidence is one over the number of plausible options kept, so
    /// overconfidence shrinks as options are added.
    PlausibleSet { plausible: f64, gap: f64 },
}

/// Single-template scorer over an option list shared by all instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    pub n_instances: usize,
    pub k: usize,
    pub model: ScorerModel,
    pub seed: u64,
}

pub fn simulate_scorer(spec: &ScorerSpec) -> Result<Simulation, SimulateError> {
    if spec.n_instances == 0 || spec.k < 2 {
        return Err(SimulateError::InvalidSpec(format!(
            "scorer needs instances and k >= 2 (got {}, {})",
            spec.n_instances, spec.k
        )));
    }
    if let ScorerModel::PlausibleSet { plausible, .. } = spec.model {
        if !(0.0..=1.0).contains(&plausible) {
            return Err(SimulateError::InvalidSpec(format!(
                "plausible = {plausible} outside [0, 1]"
            )));
        }
    }
    let stream = SeedStream::new(spec.seed).child(&["scorer"]);
    let drawn: Vec<(usize, Vec<Vec<f64>>)> = (0..spec.n_instances)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream.rng_for(&["instance", &i.to_string()]);
            let gold = rng.random_range(0..spec.k);
            let values = (0..spec.k)
                .map(|j| match spec.model {
                    ScorerModel::Uniform => 0.0,
                    ScorerModel::Gaussian { signal, sharpness } => {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        let s = if j == gold { signal } else { 0.0 };
                        sharpness * (s + z)
                    }
                    ScorerModel::PlausibleSet { plausible, gap } => {
                        if rng.random_bool(plausible) {
                            0.0
                        } else {
                            -gap
                        }
                    }
                })
                .collect();
            (gold, vec![values])
        })
        .collect();
    let golds: Vec<usize> = drawn.iter().map(|(g, _)| *g).collect();
    let dataset = sim_dataset(spec.n_instances, spec.k, 1, Cardinality::OneToOne, &golds)?;
    let vectors = to_vectors(&dataset, drawn.into_iter().map(|(_, v)| v));
    Ok(Simulation {
        dataset,
        vectors,
        templates: 1,
    })
}

impl Simulation {
    pub fn instance_vectors(&self) -> Vec<InstanceVectors> {
        self.dataset
            .instances()
            .iter()
            .zip(self.vectors.chunks(self.templates))
            .map(|(inst, vs)| InstanceVectors {
                instance_id: inst.id.clone(),
                gold_index: Some(inst.gold_index),
                vectors: vs.to_vec(),
            })
            .collect()
    }

    /// Vectors of template 0 only.
    pub fn base_vectors(&self) -> Vec<LogLikVector> {
        self.vectors
            .iter()
            .filter(|v| v.template_index == 0)
            .cloned()
            .collect()
    }

    pub fn outcomes(
        &self,
        estimators: &[Estimator],
    ) -> Result<Vec<ConfidenceOutcome>, SimulateError> {
        let opts = EstimatorOptions {
            template_count: self.templates,
            single_template: 0,
        };
        Ok(evaluate_estimators(
            &self.instance_vectors(),
            estimators,
            opts,
        )?)
    }

    /// One record per (instance, template, candidate) carrying a single
    /// answer token, so every reduction reproduces the vector entry.
    pub fn score_records(&self, scorer_id: &str) -> Vec<ScoreRecord> {
        self.vectors
            .iter()
            .flat_map(|v| {
                let inst = self
                    .dataset
                    .instance(&v.instance_id)
                    .expect("simulated instance");
                v.values
                    .iter()
                    .enumerate()
                    .map(move |(c, &lp)| ScoreRecord {
                        instance_id: v.instance_id.clone(),
                        template_index: v.template_index,
                        injection_id: None,
                        candidate_index: c,
                        tokens: vec![TokenScore::new(
                            inst.candidates[c].clone(),
                            lp,
                            SpanRole::Answer,
                        )],
                        scorer_id: scorer_id.to_string(),
                        scoring_mode: ScoringMode::CausalSum,
                    })
            })
            .collect()
    }
}
