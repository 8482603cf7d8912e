//! Instruction-pair and haystack-corpus ingestion.
//!
//! Pair files are line-delimited JSON with caller-supplied field names, so
//! upstream datasets can be consumed without rewriting. Haystack corpora are
//! directories of plain-text documents, ordered lexicographically by file
//! name so a corpus loads identically everywhere.

use crate::hash;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: duplicate pair id `{id}` (first seen at line {first})")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
        first: usize,
    },
    #[error("haystack directory {path} contains no documents")]
    EmptyHaystack { path: PathBuf },
    #[error("haystack document {path} is empty")]
    EmptyDocument { path: PathBuf },
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn default_true() -> bool {
    true
}

/// One instruction-answer pair sourced from a context-aware dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionPair {
    pub id: String,
    /// Source subtask the pair came from (e.g. a QA or summarization set).
    pub task: String,
    pub instruction: String,
    pub answer: String,
    /// Original human-annotated context, when the source dataset has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_context: Option<String>,
    /// Pairs answerable from parametric knowledge alone are excluded from
    /// context synthesis; loaders default this to true.
    #[serde(default = "default_true")]
    pub requires_context: bool,
}

/// Maps the canonical pair fields onto the names used in an input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldMap {
    pub id: String,
    pub task: String,
    pub instruction: String,
    pub answer: String,
    pub source_context: String,
    pub requires_context: String,
}

impl Default for FieldMap {
    fn default() -> Self {
        FieldMap {
            id: "id".into(),
            task: "task".into(),
            instruction: "instruction".into(),
            answer: "answer".into(),
            source_context: "source_context".into(),
            requires_context: "requires_context".into(),
        }
    }
}

fn required_str(obj: &serde_json::Map<String, Value>, field: &str) -> Result<String, String> {
    match obj.get(field) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.clone()),
        Some(Value::String(_)) => Err(format!("field `{field}` is empty")),
        Some(Value::Number(n)) => Ok(n.to_string()),
        Some(_) => Err(format!("field `{field}` is not a string")),
        None => Err(format!("missing field `{field}`")),
    }
}

/// Loads pairs from a JSONL file, mapping field names per `fields`.
/// Errors name the offending 1-based line; duplicate ids are rejected.
pub fn load_pairs(path: &Path, fields: &FieldMap) -> Result<Vec<InstructionPair>, CorpusError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut pairs = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        let value: Value = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| malformed("line is not a JSON object".into()))?;
        // A header record from an earlier stage is not a pair.
        if idx == 0 && obj.len() == 1 && obj.contains_key("header") {
            continue;
        }
        let id = required_str(obj, &fields.id).map_err(malformed)?;
        let task = required_str(obj, &fields.task).map_err(malformed)?;
        let instruction = required_str(obj, &fields.instruction).map_err(malformed)?;
        let answer = required_str(obj, &fields.answer).map_err(malformed)?;
        let source_context = match obj.get(&fields.source_context) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(Value::Null) | None => None,
            Some(_) => return Err(malformed(format!("field `{}` is not a string", fields.source_context))),
        };
        let requires_context = match obj.get(&fields.requires_context) {
            Some(Value::Bool(b)) => *b,
            Some(Value::Null) | None => true,
            Some(_) => return Err(malformed(format!("field `{}` is not a bool", fields.requires_context))),
        };
        match seen.entry(id.clone()) {
            Entry::Occupied(first) => {
                return Err(CorpusError::DuplicateId {
                    path: path.to_path_buf(),
                    line: lineno,
                    id,
                    first: *first.get(),
                })
            }
            Entry::Vacant(v) => {
                v.insert(lineno);
            }
        }
        pairs.push(InstructionPair {
            id,
            task,
            instruction,
            answer,
            source_context,
            requires_context,
        });
    }
    Ok(pairs)
}

/// Draws up to `n_per_task` pairs per task without replacement.
///
/// Candidates are sorted by id before the seeded shuffle, so the selection
/// depends only on (pair set, seed), never on input order. Tasks come out in
/// sorted order, pairs within a task in draw order.
pub fn sample_per_task(pairs: &[InstructionPair], n_per_task: usize, seed: u64) -> Vec<InstructionPair> {
    let mut by_task: BTreeMap<&str, Vec<&InstructionPair>> = BTreeMap::new();
    for pair in pairs {
        by_task.entry(&pair.task).or_default().push(pair);
    }
    let mut out = Vec::new();
    for (task, mut candidates) in by_task {
        candidates.sort_by(|a, b| a.id.cmp(&b.id));
        let mut rng = ChaCha20Rng::seed_from_u64(hash::derived_seed(seed, task));
        candidates.shuffle(&mut rng);
        out.extend(candidates.into_iter().take(n_per_task).cloned());
    }
    out
}

/// One haystack document; `id` is the file name it was loaded from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaystackDoc {
    pub id: String,
    pub text: String,
}

/// Ordered collection of filler documents for needle tests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaystackCorpus {
    pub documents: Vec<HaystackDoc>,
    /// Whitespace word count across all documents.
    pub total_words: usize,
}

impl HaystackCorpus {
    /// Builds a corpus from in-memory documents, keeping their order.
    pub fn from_documents(documents: Vec<HaystackDoc>) -> Self {
        let total_words = documents.iter().map(|d| d.text.split_whitespace().count()).sum();
        HaystackCorpus { documents, total_words }
    }
}

/// Loads every regular file in `dir` (non-recursive, dotfiles skipped) as one
/// document each, in lexicographic file-name order.
pub fn load_haystack(dir: &Path) -> Result<HaystackCorpus, CorpusError> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if !path.is_file() || name.starts_with('.') {
            continue;
        }
        files.push((name, path));
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    if files.is_empty() {
        return Err(CorpusError::EmptyHaystack {
            path: dir.to_path_buf(),
        });
    }
    let mut documents = Vec::with_capacity(files.len());
    let mut total_words = 0;
    for (id, path) in files {
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        if text.trim().is_empty() {
            return Err(CorpusError::EmptyDocument { path });
        }
        total_words += text.split_whitespace().count();
        documents.push(HaystackDoc { id, text });
    }
    Ok(HaystackCorpus {
        documents,
        total_words,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn write_pairs(lines: &[&str]) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        fs::write(&path, lines.join("\n")).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_mapped_fields_with_defaults() {
        let (_dir, path) = write_pairs(&[
            r#"{"qid":"p1","set":"qasper","q":"Who?","a":"Kane","ctx":"orig"}"#,
            r#"{"qid":"p2","set":"qasper","q":"When?","a":"Now","requires_context":false}"#,
        ]);
        let fields = FieldMap {
            id: "qid".into(),
            task: "set".into(),
            instruction: "q".into(),
            answer: "a".into(),
            source_context: "ctx".into(),
            ..FieldMap::default()
        };
        let pairs = load_pairs(&path, &fields).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0].id, "p1");
        assert_eq!(pairs[0].source_context.as_deref(), Some("orig"));
        assert!(pairs[0].requires_context, "defaults to true");
        assert!(!pairs[1].requires_context);
        assert!(pairs[1].source_context.is_none());
    }

    #[test]
    fn duplicate_id_names_both_lines() {
        let (_dir, path) = write_pairs(&[
            r#"{"id":"p1","task":"t","instruction":"q","answer":"a"}"#,
            r#"{"id":"p1","task":"t","instruction":"q2","answer":"a2"}"#,
        ]);
        let err = load_pairs(&path, &FieldMap::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate pair id `p1`"), "{msg}");
        assert!(msg.contains(":2:") && msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn parse_errors_name_the_line() {
        let (_dir, path) = write_pairs(&[
            r#"{"id":"p1","task":"t","instruction":"q","answer":"a"}"#,
            r#"{"id":"p2","task":"t","instruction":"q"}"#,
        ]);
        let err = load_pairs(&path, &FieldMap::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:") && msg.contains("answer"), "{msg}");
    }

    #[test]
    fn empty_instruction_is_rejected() {
        let (_dir, path) = write_pairs(&[r#"{"id":"p1","task":"t","instruction":"","answer":"a"}"#]);
        let err = load_pairs(&path, &FieldMap::default()).unwrap_err();
        assert!(err.to_string().contains("instruction"), "{err}");
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let pairs: Vec<InstructionPair> = (0..20)
            .map(|i| InstructionPair {
                id: format!("p{i:02}"),
                task: if i < 12 { "qa".into() } else { "sum".into() },
                instruction: "q".into(),
                answer: "a".into(),
                source_context: None,
                requires_context: true,
            })
            .collect();
        let a = sample_per_task(&pairs, 5, 42);
        let b = sample_per_task(&pairs, 5, 42);
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|p| p.task == "qa").count(), 5);
        assert_eq!(a.iter().filter(|p| p.task == "sum").count(), 5);
        // Tasks with fewer than n pairs yield all of them.
        let all = sample_per_task(&pairs, 100, 42);
        assert_eq!(all.len(), 20);
        let c = sample_per_task(&pairs, 5, 43);
        assert_ne!(a, c, "different seed should change the draw");
    }

    proptest! {
        #[test]
        fn sampling_ignores_input_order(seed in 0u64..1000, n in 1usize..8) {
            let pairs: Vec<InstructionPair> = (0..10)
                .map(|i| InstructionPair {
                    id: format!("p{i}"),
                    task: format!("t{}", i % 2),
                    instruction: "q".into(),
                    answer: "a".into(),
                    source_context: None,
                    requires_context: true,
                })
                .collect();
            let mut shuffled = pairs.clone();
            shuffled.reverse();
            prop_assert_eq!(
                sample_per_task(&pairs, n, seed),
                sample_per_task(&shuffled, n, seed)
            );
        }

        #[test]
        fn pairs_round_trip_through_serialization(
            id in "[a-z0-9]{1,8}",
            task in "[a-z]{1,8}",
            instruction in ".{1,40}",
            answer in ".{1,40}",
            source_context in proptest::option::of(".{0,40}"),
            requires_context in proptest::bool::ANY,
        ) {
            let pair = InstructionPair { id, task, instruction, answer, source_context, requires_context };
            let json = serde_json::to_string(&pair).unwrap();
            let back: InstructionPair = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(pair, back);
        }
    }

    #[test]
    fn sampled_ids_are_a_subset_without_replacement() {
        let pairs: Vec<InstructionPair> = (0..9)
            .map(|i| InstructionPair {
                id: format!("p{i}"),
                task: "t".into(),
                instruction: "q".into(),
                answer: "a".into(),
                source_context: None,
                requires_context: true,
            })
            .collect();
        let sample = sample_per_task(&pairs, 4, 7);
        let ids: BTreeSet<_> = sample.iter().map(|p| p.id.clone()).collect();
        assert_eq!(ids.len(), 4, "no repeats");
    }

    #[test]
    fn haystack_loads_in_name_order() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.txt"), "Second doc here.").unwrap();
        fs::write(dir.path().join("a.txt"), "First doc here. More words.").unwrap();
        let corpus = load_haystack(dir.path()).unwrap();
        assert_eq!(corpus.documents.len(), 2);
        assert_eq!(corpus.documents[0].id, "a.txt");
        assert_eq!(corpus.documents[1].id, "b.txt");
        assert_eq!(corpus.total_words, 8);
    }

    #[test]
    fn empty_dir_and_empty_file_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_haystack(dir.path()),
            Err(CorpusError::EmptyHaystack { .. })
        ));
        fs::write(dir.path().join("a.txt"), "   \n").unwrap();
        assert!(matches!(
            load_haystack(dir.path()),
            Err(CorpusError::EmptyDocument { .. })
        ));
    }
}
