//! Closed-answer-set probe datasets.
//!
//! A [`Dataset`] holds relations (each with an ordered list of base
//! templates) and the probe instances that reference them. Every
//! constructor path ends in [`Dataset::new`], which enforces the dataset
//! invariants, so a `Dataset` value is always valid.

mod bear;
mod io;
mod template;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bear::convert_bear;
pub use io::{load_dataset, save_dataset, METADATA_FILE};
pub use template::{
    Injection, InjectionSpec, RenderedText, Span, TemplateVariant, DEFAULT_VERBAL_MARKERS,
    MARKER_SLOT, NUMERICAL_GRID, OBJECT_SLOT, SUBJECT_SLOT,
};

use crate::seed::SeedStream;

#[derive(Debug, Error)]
pub enum ProbeDataError {
    #[error("relation {relation}: template {template_index} lacks placeholder {placeholder}")]
    MissingPlaceholder {
        relation: String,
        template_index: usize,
        placeholder: &'static str,
    },
    #[error(
        "relation {relation}: template {template_index} has {count} occurrences of {placeholder}"
    )]
    RepeatedPlaceholder {
        relation: String,
        template_index: usize,
        placeholder: &'static str,
        count: usize,
    },
    #[error("relation {relation}: template {template_index} has no marker slot and the subject is not followed by a word")]
    MarkerSlotMissing {
        relation: String,
        template_index: usize,
    },
    #[error("numerical confidence {0}% is not on the 0/25/50/75/100 grid")]
    OffGridPercent(u8),
    #[error("invalid template variant: {0}")]
    InvalidVariant(String),
    #[error("relation {0} has no templates")]
    NoTemplates(String),
    #[error("relation {0} is defined twice")]
    DuplicateRelation(String),
    #[error("instance {instance} references unknown relation {relation}")]
    DanglingRelation { instance: String, relation: String },
    #[error("instance {0} is defined twice")]
    DuplicateInstance(String),
    #[error("instance {instance}: candidate {candidate:?} appears more than once")]
    DuplicateCandidate { instance: String, candidate: String },
    #[error("instance {instance}: gold object {gold:?} is not among the candidates")]
    GoldNotInCandidates { instance: String, gold: String },
    #[error("instance {instance}: gold index {gold_index} out of range for {k} candidates")]
    GoldIndexOutOfRange {
        instance: String,
        gold_index: usize,
        k: usize,
    },
    #[error("instance {instance}: needs at least 2 candidates, has {k}")]
    TooFewCandidates { instance: String, k: usize },
    #[error(
        "1:1 relation {relation}: instance {instance} does not share the relation's candidate list"
    )]
    CandidateSetMismatch { relation: String, instance: String },
    #[error("cannot sample {k} options from {available}")]
    KTooLarge { k: usize, available: usize },
    #[error("need at least 2 answer options, asked for {0}")]
    KTooSmall(usize),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cardinality {
    #[serde(rename = "N:1")]
    NToOne,
    #[serde(rename = "1:1")]
    OneToOne,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub id: String,
    pub cardinality: Cardinality,
    /// Base templates; position equals template index.
    pub templates: Vec<TemplateVariant>,
    pub domains: BTreeSet<String>,
}

impl Relation {
    pub fn new(
        id: &str,
        cardinality: Cardinality,
        patterns: &[impl AsRef<str>],
        domains: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self, ProbeDataError> {
        if patterns.is_empty() {
            return Err(ProbeDataError::NoTemplates(id.to_string()));
        }
        let templates = patterns
            .iter()
            .enumerate()
            .map(|(i, p)| TemplateVariant::base(id, i, p.as_ref()))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            id: id.to_string(),
            cardinality,
            templates,
            domains: domains.into_iter().map(Into::into).collect(),
        })
    }

    pub fn template_count(&self) -> usize {
        self.templates.len()
    }
}

/// One fact to probe: a subject, its gold object and the closed candidate set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeInstance {
    pub id: String,
    pub relation_id: String,
    pub subject: String,
    pub gold_index: usize,
    pub candidates: Vec<String>,
}

impl ProbeInstance {
    pub fn k(&self) -> usize {
        self.candidates.len()
    }

    pub fn gold(&self) -> &str {
        &self.candidates[self.gold_index]
    }

    fn validate(&self) -> Result<(), ProbeDataError> {
        let k = self.candidates.len();
        if k < 2 {
            return Err(ProbeDataError::TooFewCandidates {
                instance: self.id.clone(),
                k,
            });
        }
        if self.gold_index >= k {
            return Err(ProbeDataError::GoldIndexOutOfRange {
                instance: self.id.clone(),
                gold_index: self.gold_index,
                k,
            });
        }
        let mut seen = BTreeSet::new();
        for c in &self.candidates {
            if !seen.insert(c.as_str()) {
                return Err(ProbeDataError::DuplicateCandidate {
                    instance: self.id.clone(),
                    candidate: c.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    relations: BTreeMap<String, Relation>,
    instances: Vec<ProbeInstance>,
    /// Instance id to position in `instances`.
    index: BTreeMap<String, usize>,
    provenance: BTreeMap<String, serde_json::Value>,
}

impl Dataset {
    /// Validates and builds a dataset. Instances are stably grouped by
    /// relation id, which is also the order they are saved in.
    pub fn new(
        relations: impl IntoIterator<Item = Relation>,
        mut instances: Vec<ProbeInstance>,
        provenance: BTreeMap<String, serde_json::Value>,
    ) -> Result<Self, ProbeDataError> {
        let mut by_id = BTreeMap::new();
        for r in relations {
            if r.templates.is_empty() {
                return Err(ProbeDataError::NoTemplates(r.id));
            }
            let id = r.id.clone();
            if by_id.insert(id.clone(), r).is_some() {
                return Err(ProbeDataError::DuplicateRelation(id));
            }
        }
        instances.sort_by(|a, b| a.relation_id.cmp(&b.relation_id));
        let mut seen = BTreeSet::new();
        let mut shared: BTreeMap<&str, &[String]> = BTreeMap::new();
        for inst in &instances {
            inst.validate()?;
            if !seen.insert(inst.id.as_str()) {
                return Err(ProbeDataError::DuplicateInstance(inst.id.clone()));
            }
            let rel =
                by_id
                    .get(&inst.relation_id)
                    .ok_or_else(|| ProbeDataError::DanglingRelation {
                        instance: inst.id.clone(),
                        relation: inst.relation_id.clone(),
                    })?;
            if rel.cardinality == Cardinality::OneToOne {
                let first = *shared.entry(&rel.id).or_insert(&inst.candidates);
                if first != inst.candidates.as_slice() {
                    return Err(ProbeDataError::CandidateSetMismatch {
                        relation: rel.id.clone(),
                        instance: inst.id.clone(),
                    });
                }
            }
        }
        Ok(Self::assemble(by_id, instances, provenance))
    }

    fn assemble(
        relations: BTreeMap<String, Relation>,
        instances: Vec<ProbeInstance>,
        provenance: BTreeMap<String, serde_json::Value>,
    ) -> Self {
        let index = instances
            .iter()
            .enumerate()
            .map(|(i, inst)| (inst.id.clone(), i))
            .collect();
        Self {
            relations,
            instances,
            index,
            provenance,
        }
    }

    pub fn relations(&self) -> impl Iterator<Item = &Relation> {
        self.relations.values()
    }

    pub fn relation(&self, id: &str) -> Option<&Relation> {
        self.relations.get(id)
    }

    pub fn instances(&self) -> &[ProbeInstance] {
        &self.instances
    }

    pub fn instance(&self, id: &str) -> Option<&ProbeInstance> {
        self.index.get(id).map(|&i| &self.instances[i])
    }

    pub fn provenance(&self) -> &BTreeMap<String, serde_json::Value> {
        &self.provenance
    }

    /// Smallest template count over all relations.
    pub fn min_template_count(&self) -> usize {
        self.relations
            .values()
            .map(Relation::template_count)
            .min()
            .unwrap_or(0)
    }

    /// Keeps the relations (and their instances) accepted by `keep`.
    pub fn restrict(&self, keep: impl Fn(&Relation) -> bool) -> Dataset {
        let relations: BTreeMap<_, _> = self
            .relations
            .iter()
            .filter(|(_, r)| keep(r))
            .map(|(k, r)| (k.clone(), r.clone()))
            .collect();
        let instances = self
            .instances
            .iter()
            .filter(|i| relations.contains_key(&i.relation_id))
            .cloned()
            .collect();
        Dataset::assemble(relations, instances, self.provenance.clone())
    }

    pub fn stats(&self) -> DatasetStats {
        let mut stats = DatasetStats {
            relations: self.relations.len(),
            instances: self.instances.len(),
            ..Default::default()
        };
        let (mut k_n1, mut n_n1, mut k_11, mut n_11) = (0usize, 0usize, 0usize, 0usize);
        for r in self.relations.values() {
            match r.cardinality {
                Cardinality::NToOne => stats.n_to_one_relations += 1,
                Cardinality::OneToOne => stats.one_to_one_relations += 1,
            }
        }
        for inst in &self.instances {
            match self.relations[&inst.relation_id].cardinality {
                Cardinality::NToOne => {
                    k_n1 += inst.k();
                    n_n1 += 1;
                }
                Cardinality::OneToOne => {
                    k_11 += inst.k();
                    n_11 += 1;
                }
            }
        }
        stats.mean_k_n_to_one = (n_n1 > 0).then(|| k_n1 as f64 / n_n1 as f64);
        stats.mean_k_one_to_one = (n_11 > 0).then(|| k_11 as f64 / n_11 as f64);
        stats
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DatasetStats {
    pub relations: usize,
    pub instances: usize,
    pub n_to_one_relations: usize,
    pub one_to_one_relations: usize,
    pub mean_k_n_to_one: Option<f64>,
    pub mean_k_one_to_one: Option<f64>,
}

/// Derives one variant per (base template, injection), injection-major.
pub fn derive_injected_variants(
    relation: &Relation,
    spec: &InjectionSpec,
) -> Result<Vec<TemplateVariant>, ProbeDataError> {
    let mut out = Vec::with_capacity(relation.templates.len() * spec.injections().len());
    for injection in spec.injections() {
        for base in &relation.templates {
            out.push(base.derive(&injection)?);
        }
    }
    Ok(out)
}

/// Indices of `k` answer options: the gold object plus `k - 1` distractors
/// drawn uniformly without replacement, in ascending order. The generator
/// is keyed by `(seed, instance.id)`.
pub fn sample_option_indices(
    instance: &ProbeInstance,
    k: usize,
    seed: u64,
) -> Result<Vec<usize>, ProbeDataError> {
    if k < 2 {
        return Err(ProbeDataError::KTooSmall(k));
    }
    let available = instance.k();
    if k > available {
        return Err(ProbeDataError::KTooLarge { k, available });
    }
    let mut rng = SeedStream::new(seed).rng_for(&["answer-options", &instance.id]);
    let distractors: Vec<usize> = (0..available)
        .filter(|&i| i != instance.gold_index)
        .collect();
    let mut keep: Vec<usize> = sample(&mut rng, distractors.len(), k - 1)
        .into_iter()
        .map(|j| distractors[j])
        .collect();
    keep.push(instance.gold_index);
    keep.sort_unstable();
    Ok(keep)
}

/// Subsampled copy of `instance` keeping the options chosen by
/// [`sample_option_indices`] in their original relative order.
pub fn sample_answer_options(
    instance: &ProbeInstance,
    k: usize,
    seed: u64,
) -> Result<ProbeInstance, ProbeDataError> {
    let keep = sample_option_indices(instance, k, seed)?;
    Ok(ProbeInstance {
        id: instance.id.clone(),
        relation_id: instance.relation_id.clone(),
        subject: instance.subject.clone(),
        gold_index: keep.iter().position(|&i| i == instance.gold_index).unwrap(),
        candidates: keep
            .iter()
            .map(|&i| instance.candidates[i].clone())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(id: &str, k: usize, gold: usize) -> ProbeInstance {
        ProbeInstance {
            id: id.into(),
            relation_id: "r".into(),
            subject: "s".into(),
            gold_index: gold,
            candidates: (0..k).map(|i| format!("o{i}")).collect(),
        }
    }

    fn relation(card: Cardinality) -> Relation {
        Relation::new("r", card, &["[X] likes [Y]."], ["Arts"]).unwrap()
    }

    #[test]
    fn dangling_relation() {
        let mut inst = instance("a", 3, 0);
        inst.relation_id = "nope".into();
        let err = Dataset::new(
            [relation(Cardinality::NToOne)],
            vec![inst],
            Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ProbeDataError::DanglingRelation { .. }));
    }

    #[test]
    fn duplicate_candidate() {
        let mut inst = instance("a", 3, 0);
        inst.candidates[2] = "o1".into();
        let err = Dataset::new(
            [relation(Cardinality::NToOne)],
            vec![inst],
            Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ProbeDataError::DuplicateCandidate { .. }));
    }

    #[test]
    fn one_to_one_shares_candidates() {
        let a = instance("a", 3, 0);
        let mut b = instance("b", 3, 1);
        b.candidates.swap(0, 2);
        let err = Dataset::new(
            [relation(Cardinality::OneToOne)],
            vec![a, b],
            Default::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ProbeDataError::CandidateSetMismatch { .. }));
    }

    #[test]
    fn injected_variant_counts() {
        let rel = Relation::new(
            "r",
            Cardinality::NToOne,
            &[
                "[X] [M]died in [Y].",
                "[X] passed away in [Y].",
                "[X] lost their life in [Y].",
                "[X] drew their last breath in [Y].",
                "[X] spent their final days in [Y].",
            ],
            ["Biographical"],
        )
        .unwrap();
        let verbal = InjectionSpec {
            verbal: vec!["certainly".into(), "possibly".into()],
            numerical: vec![],
        };
        assert_eq!(derive_injected_variants(&rel, &verbal).unwrap().len(), 10);
        let numerical = InjectionSpec {
            verbal: vec![],
            numerical: NUMERICAL_GRID.to_vec(),
        };
        let derived = derive_injected_variants(&rel, &numerical).unwrap();
        assert_eq!(derived.len(), 25);
        assert!(derived.iter().all(|v| v.parent() == Some(v.index())));
        assert!(derive_injected_variants(&rel, &InjectionSpec::default())
            .unwrap()
            .is_empty());
        // base templates untouched
        assert!(rel.templates.iter().all(|t| t.injection().is_none()));
    }

    #[test]
    fn sample_bounds() {
        let inst = instance("x", 60, 17);
        assert!(matches!(
            sample_answer_options(&inst, 61, 0),
            Err(ProbeDataError::KTooLarge {
                k: 61,
                available: 60
            })
        ));
        assert!(matches!(
            sample_answer_options(&inst, 1, 0),
            Err(ProbeDataError::KTooSmall(1))
        ));
        let full = sample_answer_options(&inst, 60, 3).unwrap();
        assert_eq!(full, inst);
    }

    #[test]
    fn sample_pairs_are_deterministic() {
        let inst = instance("x", 60, 17);
        let a = sample_answer_options(&inst, 2, 9).unwrap();
        let b = sample_answer_options(&inst, 2, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.k(), 2);
        assert_eq!(a.gold(), "o17");
    }

    #[test]
    fn sample_keeps_gold_for_all_seeds() {
        let inst = instance("x", 60, 41);
        let mut distinct = BTreeSet::new();
        for seed in 0..100 {
            let s = sample_answer_options(&inst, 5, seed).unwrap();
            assert_eq!(s.k(), 5);
            assert_eq!(s.gold(), "o41");
            assert!(s.candidates.iter().all(|c| inst.candidates.contains(c)));
            let mut sorted = s.candidates.clone();
            sorted.sort_by_key(|c| c[1..].parse::<usize>().unwrap());
            assert_eq!(sorted, s.candidates, "original order preserved");
            distinct.insert(s.candidates);
        }
        assert!(distinct.len() > 90);
    }

    #[test]
    fn stats_mean_k() {
        let rels = [
            Relation::new("a", Cardinality::NToOne, &["[X] a [Y]"], ["D"]).unwrap(),
            Relation::new("b", Cardinality::OneToOne, &["[X] b [Y]"], ["D"]).unwrap(),
        ];
        let mut i1 = instance("1", 4, 0);
        i1.relation_id = "a".into();
        let mut i2 = instance("2", 9, 0);
        i2.relation_id = "a".into();
        let mut i3 = instance("3", 5, 2);
        i3.relation_id = "b".into();
        let ds = Dataset::new(rels, vec![i1, i2, i3], Default::default()).unwrap();
        let s = ds.stats();
        assert_eq!(s.mean_k_n_to_one, Some(6.5));
        assert_eq!(s.mean_k_one_to_one, Some(5.0));
        assert_eq!((s.n_to_one_relations, s.one_to_one_relations), (1, 1));
    }
}
