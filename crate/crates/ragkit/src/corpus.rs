//! Core domain types: documents, schemas, configurations, QRA records, and
//! the JSONL dataset format.
//!
//! A dataset file is UTF-8 JSONL with LF line endings. Each line is either a
//! document or a record, discriminated by a `"kind"` field. Ids are
//! caller-supplied strings; the loader never synthesizes them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textproc::{self, LanguageTag};

#[derive(Error, Debug)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}: {source}")]
    MalformedJson {
        line: usize,
        source: serde_json::Error,
    },
    #[error("unknown question type {code:?} at line {line}")]
    UnknownQuestionType { code: String, line: usize },
    #[error("duplicate id {id} at line {line}")]
    DuplicateId { id: String, line: usize },
    #[error("dangling document_id {document_id} (record {record_id})")]
    DanglingDocumentId {
        document_id: String,
        record_id: String,
    },
}

/// The seven question types, with their short codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuestionType {
    Factual,
    Summarization,
    MultiHopReasoning,
    InformationIntegration,
    NumericalComparison,
    TemporalSequence,
    Unanswerable,
}

impl QuestionType {
    pub const ALL: [QuestionType; 7] = [
        QuestionType::Factual,
        QuestionType::Summarization,
        QuestionType::MultiHopReasoning,
        QuestionType::InformationIntegration,
        QuestionType::NumericalComparison,
        QuestionType::TemporalSequence,
        QuestionType::Unanswerable,
    ];

    pub fn code(&self) -> &'static str {
        match self {
            QuestionType::Factual => "FQ",
            QuestionType::Summarization => "SQ",
            QuestionType::MultiHopReasoning => "MRQ",
            QuestionType::InformationIntegration => "IIQ",
            QuestionType::NumericalComparison => "NCQ",
            QuestionType::TemporalSequence => "TSQ",
            QuestionType::Unanswerable => "UQ",
        }
    }

    pub fn from_code(code: &str) -> Option<QuestionType> {
        QuestionType::ALL.iter().copied().find(|q| q.code() == code)
    }

    /// Human-readable name, used in report tables.
    pub fn name(&self) -> &'static str {
        match self {
            QuestionType::Factual => "Factual",
            QuestionType::Summarization => "Summarization",
            QuestionType::MultiHopReasoning => "Multi-hop Reasoning",
            QuestionType::InformationIntegration => "Information Integration",
            QuestionType::NumericalComparison => "Numerical Comparison",
            QuestionType::TemporalSequence => "Temporal Sequence",
            QuestionType::Unanswerable => "Unanswerable",
        }
    }
}

impl fmt::Display for QuestionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl Serialize for QuestionType {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.code())
    }
}

impl<'de> Deserialize<'de> for QuestionType {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let code = String::deserialize(deserializer)?;
        QuestionType::from_code(&code)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown question type {code:?}")))
    }
}

/// A generated source document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub language: LanguageTag,
    pub scenario: String,
    /// Meta-information prepended to chunks at retrieval time, e.g. a company
    /// or patient name. Sorted map so renders are deterministic.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub text: String,
}

/// A verbatim excerpt from a source document that supports an answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthReference {
    pub source_document_id: String,
    pub text: String,
}

/// One evaluation unit: a question, its supporting references, the gold
/// answer, and the keypoints distilled from that answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QraRecord {
    pub id: String,
    pub question: String,
    pub question_type: QuestionType,
    pub document_ids: Vec<String>,
    pub references: Vec<GroundTruthReference>,
    pub answer: String,
    pub keypoints: Vec<String>,
}

/// A scenario schema: the abstract key-element structure with empty slots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub scenario: String,
    pub body: serde_json::Value,
}

/// Where a configuration leaf value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Provenance {
    Rule,
    Llm,
}

/// A schema instance: the same tree shape with every leaf holding a concrete
/// value, plus a per-leaf provenance tag keyed by leaf path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub schema_id: String,
    pub body: serde_json::Value,
    pub provenance: BTreeMap<String, Provenance>,
}

/// An in-memory dataset: documents plus records, fully cross-validated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalDataset {
    pub documents: Vec<Document>,
    pub records: Vec<QraRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum DatasetLine {
    Document(Document),
    Record(QraRecord),
}

impl EvalDataset {
    pub fn n_records(&self) -> usize {
        self.records.len()
    }

    pub fn document(&self, id: &str) -> Option<&Document> {
        self.documents.iter().find(|d| d.id == id)
    }

    /// Check referential integrity and id uniqueness without touching disk.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut ids = HashSet::new();
        for doc in &self.documents {
            if !ids.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: doc.id.clone(),
                    line: 0,
                });
            }
        }
        for record in &self.records {
            if !ids.insert(record.id.as_str()) {
                return Err(CorpusError::DuplicateId {
                    id: record.id.clone(),
                    line: 0,
                });
            }
        }
        let doc_ids: HashSet<&str> = self.documents.iter().map(|d| d.id.as_str()).collect();
        for record in &self.records {
            for doc_id in record
                .document_ids
                .iter()
                .chain(record.references.iter().map(|r| &r.source_document_id))
            {
                if !doc_ids.contains(doc_id.as_str()) {
                    return Err(CorpusError::DanglingDocumentId {
                        document_id: doc_id.clone(),
                        record_id: record.id.clone(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Load a JSONL dataset, preserving line order, and cross-validate it.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<EvalDataset, CorpusError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let reader = BufReader::new(file);

    let mut dataset = EvalDataset::default();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (line_no, line) in reader.lines().enumerate() {
        let line_no = line_no + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DatasetLine = serde_json::from_str(&line).map_err(|source| {
            // Surface a closed-enumeration failure as its own error kind.
            if let Some(code) = unknown_question_type(&line) {
                CorpusError::UnknownQuestionType {
                    code,
                    line: line_no,
                }
            } else {
                CorpusError::MalformedJson {
                    line: line_no,
                    source,
                }
            }
        })?;
        let id = match &parsed {
            DatasetLine::Document(d) => d.id.clone(),
            DatasetLine::Record(r) => r.id.clone(),
        };
        if !seen_ids.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { id, line: line_no });
        }
        match parsed {
            DatasetLine::Document(d) => dataset.documents.push(d),
            DatasetLine::Record(r) => dataset.records.push(r),
        }
    }
    dataset.validate()?;
    Ok(dataset)
}

fn unknown_question_type(line: &str) -> Option<String> {
    let value: serde_json::Value = serde_json::from_str(line).ok()?;
    let code = value.get("question_type")?.as_str()?;
    if QuestionType::from_code(code).is_none() {
        Some(code.to_string())
    } else {
        None
    }
}

/// Save a dataset as JSONL: all documents first, then all records, one object
/// per line, LF endings.
pub fn save_dataset(dataset: &EvalDataset, path: impl AsRef<Path>) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io_err = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    for doc in &dataset.documents {
        serde_json::to_writer(&mut out, &DatasetLine::Document(doc.clone()))
            .expect("document serialization is infallible");
        out.push(b'\n');
    }
    for record in &dataset.records {
        serde_json::to_writer(&mut out, &DatasetLine::Record(record.clone()))
            .expect("record serialization is infallible");
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&out).map_err(io_err)?;
    Ok(())
}

/// Severity of a record validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

/// One violated invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

/// Check a record's invariants against its dataset. Returns an empty list
/// when everything holds. A keypoint count outside 3..=5 is only a warning,
/// since answers are merely expected, not required, to distill to that range.
pub fn validate_record(record: &QraRecord, dataset: &EvalDataset) -> Vec<Violation> {
    let mut violations = Vec::new();
    let unanswerable = record.question_type == QuestionType::Unanswerable;

    if record.references.is_empty() && !unanswerable {
        violations.push(Violation {
            severity: Severity::Error,
            field: "references".into(),
            message: "references empty for a non-Unanswerable record".into(),
        });
    }
    if record.keypoints.is_empty() && !unanswerable {
        violations.push(Violation {
            severity: Severity::Error,
            field: "keypoints".into(),
            message: "keypoints empty for a non-Unanswerable record".into(),
        });
    }
    let k = record.keypoints.len();
    if k > 0 && !(3..=5).contains(&k) {
        violations.push(Violation {
            severity: Severity::Warning,
            field: "keypoints".into(),
            message: format!("keypoints={k} outside 3-5"),
        });
    }
    for doc_id in &record.document_ids {
        if dataset.document(doc_id).is_none() {
            violations.push(Violation {
                severity: Severity::Error,
                field: "document_ids".into(),
                message: format!("dangling document_id {doc_id}"),
            });
        }
    }
    for (i, reference) in record.references.iter().enumerate() {
        match dataset.document(&reference.source_document_id) {
            None => violations.push(Violation {
                severity: Severity::Error,
                field: format!("references[{i}]"),
                message: format!(
                    "dangling document_id {}",
                    reference.source_document_id
                ),
            }),
            Some(doc) => {
                if reference.text.is_empty() {
                    violations.push(Violation {
                        severity: Severity::Error,
                        field: format!("references[{i}]"),
                        message: "reference text empty".into(),
                    });
                } else if !textproc::normalize(&doc.text)
                    .contains(&textproc::normalize(&reference.text))
                {
                    violations.push(Violation {
                        severity: Severity::Error,
                        field: format!("references[{i}]"),
                        message: format!(
                            "reference text not found verbatim in document {}",
                            reference.source_document_id
                        ),
                    });
                }
            }
        }
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_document(id: &str) -> Document {
        Document {
            id: id.into(),
            language: LanguageTag::En,
            scenario: "finance".into(),
            meta: BTreeMap::from([("company".into(), "Acme".into())]),
            text: "Acme posted record revenue. The board approved a dividend.".into(),
        }
    }

    fn sample_record(id: &str, doc: &str) -> QraRecord {
        QraRecord {
            id: id.into(),
            question: "What did Acme post?".into(),
            question_type: QuestionType::Factual,
            document_ids: vec![doc.into()],
            references: vec![GroundTruthReference {
                source_document_id: doc.into(),
                text: "Acme posted record revenue.".into(),
            }],
            answer: "Acme posted record revenue.".into(),
            keypoints: vec![
                "Acme posted record revenue.".into(),
                "The revenue was a record.".into(),
                "The company is Acme.".into(),
            ],
        }
    }

    #[test]
    fn question_type_codes_roundtrip() {
        for qt in QuestionType::ALL {
            assert_eq!(QuestionType::from_code(qt.code()), Some(qt));
        }
        assert_eq!(QuestionType::from_code("XQ"), None);
    }

    #[test]
    fn load_save_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let dataset = EvalDataset {
            documents: vec![sample_document("d1")],
            records: vec![sample_record("r1", "d1")],
        };
        save_dataset(&dataset, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(loaded, dataset);
    }

    #[test]
    fn unknown_question_type_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let doc = serde_json::to_string(&DatasetLine::Document(sample_document("d1"))).unwrap();
        let bad = r#"{"kind":"record","id":"r1","question":"q","question_type":"XQ","document_ids":["d1"],"references":[],"answer":"a","keypoints":[]}"#;
        std::fs::write(&path, format!("{doc}\n{bad}\n")).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert_eq!(
            err.to_string(),
            "unknown question type \"XQ\" at line 2"
        );
    }

    #[test]
    fn dangling_document_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let dataset = EvalDataset {
            documents: vec![sample_document("d1")],
            records: vec![sample_record("r1", "d9")],
        };
        save_dataset(&dataset, &path).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("dangling document_id d9"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let dataset = EvalDataset {
            documents: vec![sample_document("d1"), sample_document("d1")],
            records: vec![],
        };
        save_dataset(&dataset, &path).unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { .. }), "{err}");
    }

    #[test]
    fn malformed_json_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        std::fs::write(&path, "{\"kind\":\"document\"").unwrap();
        let err = load_dataset(&path).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn well_formed_record_has_no_violations() {
        let dataset = EvalDataset {
            documents: vec![sample_document("d1")],
            records: vec![sample_record("r1", "d1")],
        };
        assert!(validate_record(&dataset.records[0], &dataset).is_empty());
    }

    #[test]
    fn unanswerable_record_may_have_no_references() {
        let dataset = EvalDataset {
            documents: vec![sample_document("d1")],
            records: vec![],
        };
        let record = QraRecord {
            id: "r1".into(),
            question: "What is the CFO's name?".into(),
            question_type: QuestionType::Unanswerable,
            document_ids: vec!["d1".into()],
            references: vec![],
            answer: "The document does not name the CFO.".into(),
            keypoints: vec![],
        };
        assert!(validate_record(&record, &dataset).is_empty());
    }

    #[test]
    fn keypoint_count_outside_range_is_a_warning() {
        let dataset = EvalDataset {
            documents: vec![sample_document("d1")],
            records: vec![],
        };
        let mut record = sample_record("r1", "d1");
        record.keypoints = (0..8).map(|i| format!("Point {i}.")).collect();
        let violations = validate_record(&record, &dataset);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].severity, Severity::Warning);
        assert!(violations[0].message.contains("keypoints=8 outside 3-5"));
    }

    #[test]
    fn unrelocatable_reference_is_an_error() {
        let dataset = EvalDataset {
            documents: vec![sample_document("d1")],
            records: vec![],
        };
        let mut record = sample_record("r1", "d1");
        record.references[0].text = "Text that is not in the document.".into();
        let violations = validate_record(&record, &dataset);
        assert!(violations
            .iter()
            .any(|v| v.severity == Severity::Error && v.message.contains("not found verbatim")));
    }
}
