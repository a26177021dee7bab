//! Native dataset layout: a directory with `metadata.json` and one
//! line-delimited JSON file per relation (`<relation id>.jsonl`). The first
//! line of a relation file is the relation header, every further line is
//! one instance.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Cardinality, Dataset, ProbeDataError, ProbeInstance, Relation};

pub const METADATA_FILE: &str = "metadata.json";
const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    schema_version: u32,
    relations: Vec<String>,
    #[serde(default)]
    provenance: BTreeMap<String, serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelationHeader {
    id: String,
    cardinality: Cardinality,
    domains: BTreeSet<String>,
    templates: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    id: String,
    subject: String,
    gold: String,
    candidates: Vec<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ProbeDataError + '_ {
    move |source| ProbeDataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn parse_err(path: &Path, line: usize, message: impl ToString) -> ProbeDataError {
    ProbeDataError::Parse {
        path: path.display().to_string(),
        line,
        message: message.to_string(),
    }
}

fn relation_file(dir: &Path, id: &str) -> Result<std::path::PathBuf, ProbeDataError> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(parse_err(
            &dir.join(METADATA_FILE),
            0,
            format!("relation id {id:?} is not usable as a file name"),
        ));
    }
    Ok(dir.join(format!("{id}.jsonl")))
}

/// Loads and validates a dataset directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset, ProbeDataError> {
    let dir = dir.as_ref();
    let meta_path = dir.join(METADATA_FILE);
    let meta_text = fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: Metadata =
        serde_json::from_str(&meta_text).map_err(|e| parse_err(&meta_path, e.line(), e))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(parse_err(
            &meta_path,
            0,
            format!("unsupported schema_version {}", meta.schema_version),
        ));
    }
    let mut relations = Vec::with_capacity(meta.relations.len());
    let mut instances = Vec::new();
    for id in &meta.relations {
        let path = relation_file(dir, id)?;
        let file = fs::File::open(&path).map_err(io_err(&path))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let header: RelationHeader = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(io_err(&path))?;
                serde_json::from_str(&line).map_err(|e| parse_err(&path, 1, e))?
            }
            None => return Err(parse_err(&path, 1, "missing relation header")),
        };
        if &header.id != id {
            return Err(parse_err(
                &path,
                1,
                format!("header id {:?} does not match file for {id:?}", header.id),
            ));
        }
        relations.push(Relation::new(
            &header.id,
            header.cardinality,
            &header.templates,
            header.domains,
        )?);
        for (n, line) in lines {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: InstanceRecord =
                serde_json::from_str(&line).map_err(|e| parse_err(&path, n + 1, e))?;
            let gold_index = rec
                .candidates
                .iter()
                .position(|c| *c == rec.gold)
                .ok_or_else(|| ProbeDataError::GoldNotInCandidates {
                    instance: rec.id.clone(),
                    gold: rec.gold.clone(),
                })?;
            instances.push(ProbeInstance {
                id: rec.id,
                relation_id: id.clone(),
                subject: rec.subject,
                gold_index,
                candidates: rec.candidates,
            });
        }
    }
    let dataset = Dataset::new(relations, instances, meta.provenance)?;
    log::info!("loaded {}: {:?}", dir.display(), dataset.stats());
    Ok(dataset)
}

/// Writes a dataset in the native layout; `load_dataset` reads it back
/// unchanged.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), ProbeDataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let meta = Metadata {
        schema_version: SCHEMA_VERSION,
        relations: dataset.relations().map(|r| r.id.clone()).collect(),
        provenance: dataset.provenance().clone(),
    };
    let meta_path = dir.join(METADATA_FILE);
    let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    text.push('\n');
    fs::write(&meta_path, text).map_err(io_err(&meta_path))?;

    for rel in dataset.relations() {
        let path = relation_file(dir, &rel.id)?;
        let mut out = Vec::new();
        let header = RelationHeader {
            id: rel.id.clone(),
            cardinality: rel.cardinality,
            domains: rel.domains.clone(),
            templates: rel
                .templates
                .iter()
                .map(|t| t.pattern().to_string())
                .collect(),
        };
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.push(b'\n');
        for inst in dataset
            .instances()
            .iter()
            .filter(|i| i.relation_id == rel.id)
        {
            let rec = InstanceRecord {
                id: inst.id.clone(),
                subject: inst.subject.clone(),
                gold: inst.gold().to_string(),
                candidates: inst.candidates.clone(),
            };
            serde_json::to_writer(&mut out, &rec).expect("instance serializes");
            out.push(b'\n');
        }
        let mut f = fs::File::create(&path).map_err(io_err(&path))?;
        f.write_all(&out).map_err(io_err(&path))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn missing_object_placeholder_names_template() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            METADATA_FILE,
            r#"{"schema_version":1,"relations":["P19"]}"#,
        );
        write(
            tmp.path(),
            "P19.jsonl",
            concat!(
                r#"{"id":"P19","cardinality":"N:1","domains":["Biographical"],"templates":["[X] was born in [Y].","[X] was born."]}"#,
                "\n",
                r#"{"id":"i1","subject":"Ada","gold":"London","candidates":["London","Paris"]}"#,
                "\n"
            ),
        );
        let err = load_dataset(tmp.path()).unwrap_err();
        match err {
            ProbeDataError::MissingPlaceholder {
                relation,
                template_index,
                placeholder,
            } => {
                assert_eq!(relation, "P19");
                assert_eq!(template_index, 1);
                assert_eq!(placeholder, "[Y]");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gold_must_be_a_candidate() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            METADATA_FILE,
            r#"{"schema_version":1,"relations":["r"]}"#,
        );
        write(
            tmp.path(),
            "r.jsonl",
            concat!(
                r#"{"id":"r","cardinality":"N:1","domains":[],"templates":["[X] [Y]"]}"#,
                "\n",
                r#"{"id":"i1","subject":"a","gold":"z","candidates":["x","y"]}"#,
                "\n"
            ),
        );
        assert!(matches!(
            load_dataset(tmp.path()),
            Err(ProbeDataError::GoldNotInCandidates { .. })
        ));
    }

    #[test]
    fn malformed_line_reports_position() {
        let tmp = tempfile::tempdir().unwrap();
        write(
            tmp.path(),
            METADATA_FILE,
            r#"{"schema_version":1,"relations":["r"]}"#,
        );
        write(
            tmp.path(),
            "r.jsonl",
            concat!(
                r#"{"id":"r","cardinality":"N:1","domains":[],"templates":["[X] [Y]"]}"#,
                "\n",
                "{not json\n"
            ),
        );
        match load_dataset(tmp.path()) {
            Err(ProbeDataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }
}
