//! Import of the published BEAR layout.
//!
//! BEAR ships a `metadata_relations.json` keyed by relation id, where each
//! entry carries `templates`, `answer_space_labels` and optionally `domains`
//! and `cardinality`, plus one `<relation id>.jsonl` per relation whose lines
//! carry `sub_id`, `sub_label` and `obj_label`. Instances may override the
//! relation answer space with their own `answer_space_labels`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{Cardinality, Dataset, ProbeDataError, ProbeInstance, Relation};

pub const BEAR_METADATA_FILE: &str = "metadata_relations.json";

#[derive(Deserialize)]
struct BearRelation {
    templates: Vec<String>,
    answer_space_labels: Vec<String>,
    #[serde(default)]
    domains: Vec<String>,
    #[serde(default)]
    cardinality: Option<String>,
}

#[derive(Deserialize)]
struct BearInstance {
    #[serde(default)]
    sub_id: Option<String>,
    sub_label: String,
    obj_label: String,
    #[serde(default)]
    answer_space_labels: Option<Vec<String>>,
}

fn parse_cardinality(raw: &str) -> Option<Cardinality> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1:1" | "one_to_one" | "1-1" => Some(Cardinality::OneToOne),
        "n:1" | "n_to_one" | "n-1" | "many_to_one" => Some(Cardinality::NToOne),
        _ => None,
    }
}

/// Reads a BEAR release directory into a [`Dataset`].
///
/// Without an explicit `cardinality`, a relation is 1:1 when every instance
/// has a distinct gold object and the instance count equals the answer space
/// size; otherwise it is N:1.
pub fn convert_bear(dir: impl AsRef<Path>) -> Result<Dataset, ProbeDataError> {
    let dir = dir.as_ref();
    let meta_path = dir.join(BEAR_METADATA_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|source| ProbeDataError::Io {
        path: meta_path.display().to_string(),
        source,
    })?;
    let meta: BTreeMap<String, BearRelation> =
        serde_json::from_str(&text).map_err(|e| ProbeDataError::Parse {
            path: meta_path.display().to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;

    let mut relations = Vec::new();
    let mut instances = Vec::new();
    for (rel_id, rel) in &meta {
        let path = dir.join(format!("{rel_id}.jsonl"));
        let body = fs::read_to_string(&path).map_err(|source| ProbeDataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut rel_instances = Vec::new();
        for (n, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: BearInstance =
                serde_json::from_str(line).map_err(|e| ProbeDataError::Parse {
                    path: path.display().to_string(),
                    line: n + 1,
                    message: e.to_string(),
                })?;
            let candidates = raw
                .answer_space_labels
                .unwrap_or_else(|| rel.answer_space_labels.clone());
            let id = format!(
                "{rel_id}:{}",
                raw.sub_id.unwrap_or_else(|| format!("{}", n + 1))
            );
            let gold_index = candidates
                .iter()
                .position(|c| *c == raw.obj_label)
                .ok_or_else(|| ProbeDataError::GoldNotInCandidates {
                    instance: id.clone(),
                    gold: raw.obj_label.clone(),
                })?;
            rel_instances.push(ProbeInstance {
                id,
                relation_id: rel_id.clone(),
                subject: raw.sub_label,
                gold_index,
                candidates,
            });
        }
        let cardinality = match rel.cardinality.as_deref() {
            Some(raw) => parse_cardinality(raw).ok_or_else(|| ProbeDataError::Parse {
                path: meta_path.display().to_string(),
                line: 0,
                message: format!("relation {rel_id}: unknown cardinality {raw:?}"),
            })?,
            None => {
                let golds: BTreeSet<&str> = rel_instances.iter().map(|i| i.gold()).collect();
                if golds.len() == rel_instances.len()
                    && rel_instances.len() == rel.answer_space_labels.len()
                {
                    Cardinality::OneToOne
                } else {
                    Cardinality::NToOne
                }
            }
        };
        relations.push(Relation::new(
            rel_id,
            cardinality,
            &rel.templates,
            rel.domains.iter().cloned(),
        )?);
        instances.extend(rel_instances);
    }
    let mut provenance = BTreeMap::new();
    provenance.insert("source".to_string(), serde_json::json!("bear"));
    Dataset::new(relations, instances, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converts_minimal_release() {
        let tmp = tempfile::tempdir().unwrap();
        fs::write(
            tmp.path().join(BEAR_METADATA_FILE),
            r#"{
              "P19": {"templates": ["[X] was born in [Y]."], "answer_space_labels": ["Paris","London","Rome"], "domains": ["Biographical"]},
              "P36": {"templates": ["The capital of [X] is [Y]."], "answer_space_labels": ["Paris","Rome"]}
            }"#,
        )
        .unwrap();
        fs::write(
            tmp.path().join("P19.jsonl"),
            concat!(
                r#"{"sub_id":"Q1","sub_label":"Ada","obj_id":"Q84","obj_label":"London"}"#,
                "\n",
                r#"{"sub_id":"Q2","sub_label":"Bo","obj_label":"London"}"#,
                "\n"
            ),
        )
        .unwrap();
        fs::write(
            tmp.path().join("P36.jsonl"),
            concat!(
                r#"{"sub_id":"Q142","sub_label":"France","obj_label":"Paris"}"#,
                "\n",
                r#"{"sub_id":"Q38","sub_label":"Italy","obj_label":"Rome"}"#,
                "\n"
            ),
        )
        .unwrap();
        let ds = convert_bear(tmp.path()).unwrap();
        assert_eq!(ds.relation("P19").unwrap().cardinality, Cardinality::NToOne);
        assert_eq!(
            ds.relation("P36").unwrap().cardinality,
            Cardinality::OneToOne
        );
        let ada = ds.instance("P19:Q1").unwrap();
        assert_eq!(ada.gold(), "London");
        assert_eq!(ada.k(), 3);
    }
}
