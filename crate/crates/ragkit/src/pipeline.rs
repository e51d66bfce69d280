//! Dataset generation: schema normalization, configuration filling, document
//! generation, QRA drafting, reference extraction, answer refinement, and
//! keypoint extraction.
//!
//! Every LLM call goes through the gateway, so a populated response cache
//! makes the whole pipeline replayable byte for byte.

use std::collections::BTreeMap;
use std::ops::Range;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{
    Config, Document, GroundTruthReference, Provenance, QraRecord, QuestionType, Schema,
};
use crate::gateway::{ChatRequest, Gateway};
use crate::templates::TemplateSet;
use crate::textproc::{self, LanguageTag};

#[derive(Error, Debug)]
pub enum PipelineError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("no rule covers leaf {0}")]
    UncoveredLeaf(String),
    #[error("LLM-delegated leaf {0} but no gateway configured")]
    LlmLeafWithoutGateway(String),
    #[error("empty completion at stage {0}")]
    EmptyCompletion(&'static str),
    #[error("unparseable completion at stage {stage} after retry:\n{transcript}")]
    Unparseable {
        stage: &'static str,
        transcript: String,
    },
    #[error("empty answer")]
    EmptyAnswer,
    #[error(transparent)]
    Gateway(#[from] crate::gateway::GatewayError),
    #[error(transparent)]
    Template(#[from] crate::templates::TemplateError),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Warnings accumulated across pipeline stages; the CLI prints them to
/// stderr, tests inspect them.
pub type Warnings = Vec<String>;

// ---------------------------------------------------------------------------
// Schema normalization
// ---------------------------------------------------------------------------

/// Rewrite event-like map nodes into lists of entries carrying an explicit
/// `"event"` field.
///
/// A map node is event-like when every value is an object and all those
/// objects share one key set: its keys are concrete entry names rather than
/// generic field names, e.g. `{"Major Asset Acquisition": {"time": ...}}`
/// becomes `[{"event": "Major Asset Acquisition", "time": ...}]`. The
/// rewrite is bottom-up and idempotent (arrays are never rewritten again).
pub fn normalize_schema(raw: &Schema) -> Schema {
    Schema {
        scenario: raw.scenario.clone(),
        body: normalize_value(&raw.body),
    }
}

fn normalize_value(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let rebuilt: serde_json::Map<String, Value> = map
                .iter()
                .map(|(k, v)| (k.clone(), normalize_value(v)))
                .collect();
            if is_event_like(&rebuilt) {
                let entries = rebuilt
                    .into_iter()
                    .map(|(name, fields)| {
                        let mut entry = serde_json::Map::new();
                        entry.insert("event".to_string(), Value::String(name));
                        if let Value::Object(fields) = fields {
                            entry.extend(fields);
                        }
                        Value::Object(entry)
                    })
                    .collect();
                Value::Array(entries)
            } else {
                Value::Object(rebuilt)
            }
        }
        Value::Array(items) => Value::Array(items.iter().map(normalize_value).collect()),
        other => other.clone(),
    }
}

fn is_event_like(map: &serde_json::Map<String, Value>) -> bool {
    if map.is_empty() {
        return false;
    }
    let mut key_sets = map.values().map(|v| match v {
        Value::Object(fields) => Some(fields.keys().collect::<Vec<_>>()),
        _ => None,
    });
    let Some(Some(first)) = key_sets.next() else {
        return false;
    };
    key_sets.all(|ks| ks.as_ref() == Some(&first))
}

// ---------------------------------------------------------------------------
// Rule tables and configuration generation
// ---------------------------------------------------------------------------

/// One leaf generator. Paths use `.` for object fields and `[*]` to match
/// any list position, e.g. `caseProcess[*].date`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Pick one of the options.
    Enum { options: Vec<String> },
    /// Uniform integer in `[min, max]`, rendered with optional prefix/unit.
    Int {
        min: i64,
        max: i64,
        #[serde(default)]
        prefix: Option<String>,
        #[serde(default)]
        unit: Option<String>,
    },
    /// A calendar date within the year range.
    Date {
        start_year: i32,
        end_year: i32,
        #[serde(default)]
        style: Option<String>,
    },
    /// Delegate this leaf to the LLM.
    Llm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafRule {
    pub path: String,
    #[serde(flatten)]
    pub generator: Generator,
}

/// How many entries a list should hold; the schema's entry templates are
/// cycled to reach the count.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountRule {
    pub path: String,
    pub min: usize,
    pub max: usize,
}

/// Per-schema-leaf generators plus list sizing.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RuleTable {
    pub rules: Vec<LeafRule>,
    #[serde(default)]
    pub counts: Vec<CountRule>,
}

impl RuleTable {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&body).map_err(|source| PipelineError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    fn find(&self, concrete_path: &str) -> Option<&Generator> {
        self.rules
            .iter()
            .find(|r| pattern_matches(&r.path, concrete_path))
            .map(|r| &r.generator)
    }

    fn count_for(&self, concrete_path: &str) -> Option<&CountRule> {
        self.counts
            .iter()
            .find(|c| pattern_matches(&c.path, concrete_path))
    }
}

/// Load a schema JSON file of the shape `{"scenario": ..., "body": {...}}`.
pub fn load_schema(path: impl AsRef<Path>) -> Result<Schema, PipelineError> {
    let path = path.as_ref();
    let body = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|source| PipelineError::Json {
        path: path.display().to_string(),
        source,
    })
}

/// `[*]` in a pattern segment matches any concrete index.
fn pattern_matches(pattern: &str, concrete: &str) -> bool {
    let mut p = pattern;
    let mut c = concrete;
    loop {
        match (p.find("[*]"), c.find('[')) {
            (None, _) => return p == c,
            (Some(pi), Some(ci)) => {
                if p[..pi] != c[..ci] {
                    return false;
                }
                let Some(close) = c[ci..].find(']') else {
                    return false;
                };
                p = &p[pi + 3..];
                c = &c[ci + close + 1..];
            }
            (Some(_), None) => return false,
        }
    }
}

fn leaf_seed(seed: u64, scope: &str, path: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(scope.as_bytes());
    hasher.update(path.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

const MONTHS_EN: [&str; 12] = [
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
];

fn generate_value(generator: &Generator, rng: &mut ChaCha8Rng) -> Option<String> {
    match generator {
        Generator::Enum { options } => {
            if options.is_empty() {
                return Some(String::new());
            }
            Some(options[rng.gen_range(0..options.len())].clone())
        }
        Generator::Int {
            min,
            max,
            prefix,
            unit,
        } => {
            let value = rng.gen_range(*min..=*max.max(min));
            Some(format!(
                "{}{}{}",
                prefix.as_deref().unwrap_or(""),
                value,
                unit.as_deref().unwrap_or("")
            ))
        }
        Generator::Date {
            start_year,
            end_year,
            style,
        } => {
            let year = rng.gen_range(*start_year..=*end_year.max(start_year));
            let month = rng.gen_range(1..=12usize);
            let day = rng.gen_range(1..=28u32);
            match style.as_deref() {
                Some("cn") => Some(format!("{year}年{month}月{day}日")),
                _ => Some(format!("{day} {} {year}", MONTHS_EN[month - 1])),
            }
        }
        Generator::Llm => None,
    }
}

/// Instantiate a schema into a configuration.
///
/// List nodes are sized first (seeded, via the rule table's count rules),
/// then every empty leaf is filled: rule leaves deterministically from the
/// seed, LLM leaves via one chat call each, with the already-filled values of
/// the enclosing entry passed as context so sub-events stay consistent.
/// Non-empty schema leaves (entry discriminators) are copied through.
pub fn generate_config(
    schema: &Schema,
    rules: &RuleTable,
    seed: u64,
    llm: Option<(&Gateway, &str)>,
) -> Result<Config, PipelineError> {
    let mut body = schema.body.clone();
    let scope = schema.scenario.clone();

    expand_lists(&mut body, rules, seed, &scope, String::new());

    // Rule-driven pass over every leaf.
    let mut provenance = BTreeMap::new();
    let mut llm_leaves: Vec<String> = Vec::new();
    fill_rule_leaves(
        &mut body,
        rules,
        seed,
        &scope,
        String::new(),
        &mut provenance,
        &mut llm_leaves,
    )?;

    // LLM pass, in document order, after structured facts are in place.
    for path in llm_leaves {
        let Some((gateway, model)) = llm else {
            return Err(PipelineError::LlmLeafWithoutGateway(path));
        };
        let context = enclosing_entry(&body, &path);
        let prompt = TemplateSet::embedded().render(
            "config_value",
            &[
                ("scenario", schema.scenario.as_str()),
                ("field_path", path.as_str()),
                ("context", &serde_json::to_string_pretty(&context).unwrap()),
            ],
        )?;
        let value = gateway.chat_complete(&ChatRequest::new(model, prompt))?;
        set_leaf(&mut body, &path, value.trim().to_string());
        provenance.insert(path, Provenance::Llm);
    }

    Ok(Config {
        schema_id: schema.scenario.clone(),
        body,
        provenance,
    })
}

fn expand_lists(value: &mut Value, rules: &RuleTable, seed: u64, scope: &str, path: String) {
    match value {
        Value::Object(map) => {
            for (key, child) in map.iter_mut() {
                let child_path = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                expand_lists(child, rules, seed, scope, child_path);
            }
        }
        Value::Array(items) => {
            if let Some(count) = rules.count_for(&path) {
                if !items.is_empty() {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(leaf_seed(seed, scope, &format!("{path}#count")));
                    let n = rng.gen_range(count.min..=count.max.max(count.min));
                    let templates: Vec<Value> = items.clone();
                    *items = (0..n.max(1))
                        .map(|i| templates[i % templates.len()].clone())
                        .collect();
                }
            }
            for (i, item) in items.iter_mut().enumerate() {
                expand_lists(item, rules, seed, scope, format!("{path}[{i}]"));
            }
        }
        _ => {}
    }
}

fn fill_rule_leaves(
    value: &mut Value,
    rules: &RuleTable,
    seed: u64,
    scope: &str,
    path: String,
    provenance: &mut BTreeMap<String, Provenance>,
    llm_leaves: &mut Vec<String>,
) -> Result<(), PipelineError> {
    match value {
        Value::Object(map) => {
            for (key, child) in map.iter_mut() {
                let child_path = if path.is_empty() {
                    key.clone()
                } else {
                    format!("{path}.{key}")
                };
                fill_rule_leaves(child, rules, seed, scope, child_path, provenance, llm_leaves)?;
            }
            Ok(())
        }
        Value::Array(items) => {
            for (i, item) in items.iter_mut().enumerate() {
                fill_rule_leaves(
                    item,
                    rules,
                    seed,
                    scope,
                    format!("{path}[{i}]"),
                    provenance,
                    llm_leaves,
                )?;
            }
            Ok(())
        }
        Value::String(text) if text.is_empty() => {
            let generator = rules
                .find(&path)
                .ok_or_else(|| PipelineError::UncoveredLeaf(path.clone()))?;
            match generate_value(
                generator,
                &mut ChaCha8Rng::seed_from_u64(leaf_seed(seed, scope, &path)),
            ) {
                Some(filled) => {
                    *text = filled;
                    provenance.insert(path, Provenance::Rule);
                }
                None => llm_leaves.push(path),
            }
            Ok(())
        }
        // A pre-filled leaf (an entry discriminator) is structural.
        Value::String(_) => {
            provenance.insert(path, Provenance::Rule);
            Ok(())
        }
        _ => Ok(()),
    }
}

/// The innermost object containing a leaf, used as LLM context.
fn enclosing_entry(body: &Value, path: &str) -> Value {
    let parent_path = match path.rfind(['.', '[']) {
        Some(idx) => &path[..idx],
        None => return body.clone(),
    };
    get_path(body, parent_path).cloned().unwrap_or(Value::Null)
}

fn get_path<'a>(body: &'a Value, path: &str) -> Option<&'a Value> {
    let mut current = body;
    for segment in split_path(path) {
        current = match segment {
            PathSegment::Key(key) => current.get(key)?,
            PathSegment::Index(idx) => current.get(idx)?,
        };
    }
    Some(current)
}

fn set_leaf(body: &mut Value, path: &str, new_value: String) {
    let mut current = body;
    for segment in split_path(path) {
        current = match segment {
            PathSegment::Key(key) => match current.get_mut(key) {
                Some(v) => v,
                None => return,
            },
            PathSegment::Index(idx) => match current.get_mut(idx) {
                Some(v) => v,
                None => return,
            },
        };
    }
    *current = Value::String(new_value);
}

enum PathSegment<'a> {
    Key(&'a str),
    Index(usize),
}

fn split_path(path: &str) -> Vec<PathSegment<'_>> {
    let mut segments = Vec::new();
    for part in path.split('.') {
        let mut rest = part;
        while let Some(open) = rest.find('[') {
            if open > 0 {
                segments.push(PathSegment::Key(&rest[..open]));
            }
            let close = rest[open..].find(']').map(|i| open + i).unwrap_or(rest.len());
            if let Ok(idx) = rest[open + 1..close].parse() {
                segments.push(PathSegment::Index(idx));
            }
            rest = rest.get(close + 1..).unwrap_or("");
        }
        if !rest.is_empty() {
            segments.push(PathSegment::Key(rest));
        }
    }
    segments
}

// ---------------------------------------------------------------------------
// Document generation
// ---------------------------------------------------------------------------

/// Cast a configuration into a narrative document via one chat call.
///
/// `meta_fields` maps meta keys to config leaf paths (e.g. company name);
/// the extracted values ride along on the document for meta-aware chunking.
/// Afterwards every rule-provenance leaf is checked to appear verbatim in the
/// text; misses become `unrealized fact` warnings, not errors.
#[allow(clippy::too_many_arguments)]
pub fn generate_document(
    doc_id: &str,
    config: &Config,
    scenario: &str,
    language: LanguageTag,
    meta_fields: &BTreeMap<String, String>,
    templates: &TemplateSet,
    llm: (&Gateway, &str),
    warnings: &mut Warnings,
) -> Result<Document, PipelineError> {
    let prompt = templates.render(
        "document",
        &[
            ("scenario", scenario),
            ("language", language.as_str()),
            ("config", &serde_json::to_string_pretty(&config.body).unwrap()),
        ],
    )?;
    let (gateway, model) = llm;
    let text = gateway.chat_complete(&ChatRequest::new(model, prompt).max_new_tokens(4096))?;
    let text = text.trim().to_string();
    if text.is_empty() {
        return Err(PipelineError::EmptyCompletion("generate_document"));
    }

    let mut meta = BTreeMap::new();
    for (key, path) in meta_fields {
        if let Some(Value::String(value)) = get_path(&config.body, path) {
            meta.insert(key.clone(), value.clone());
        }
    }

    let normalized_text = textproc::normalize(&text);
    for (path, provenance) in &config.provenance {
        if *provenance != Provenance::Rule {
            continue;
        }
        if let Some(Value::String(value)) = get_path(&config.body, path) {
            if !value.is_empty() && !normalized_text.contains(&textproc::normalize(value)) {
                warnings.push(format!("unrealized fact: {path}"));
            }
        }
    }

    Ok(Document {
        id: doc_id.to_string(),
        language,
        scenario: scenario.to_string(),
        meta,
        text,
    })
}

// ---------------------------------------------------------------------------
// QRA drafting
// ---------------------------------------------------------------------------

/// A reference located in its source document.
#[derive(Debug, Clone, PartialEq)]
pub struct LocatedReference {
    pub reference: GroundTruthReference,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditKind {
    Add,
    Delete,
}

/// One applied refinement edit.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementEdit {
    pub round: usize,
    pub kind: EditKind,
    pub text: String,
}

/// A question/answer pair on its way to becoming a [`QraRecord`].
#[derive(Debug, Clone, PartialEq)]
pub struct QraDraft {
    pub question: String,
    pub answer: String,
    pub question_type: QuestionType,
    pub references: Vec<LocatedReference>,
    pub refinement_log: Vec<RefinementEdit>,
}

/// Markers that an unanswerable draft's answer is expected to contain.
const INSUFFICIENCY_MARKERS: &[&str] = &[
    "does not", "do not", "cannot", "not provide", "no information", "insufficient", "无法",
    "没有", "未提供",
];

/// Draft a question/answer pair of the given type from a document.
pub fn generate_qra(
    document: &Document,
    qtype: QuestionType,
    variant: usize,
    templates: &TemplateSet,
    llm: (&Gateway, &str),
    warnings: &mut Warnings,
) -> Result<QraDraft, PipelineError> {
    let template_name = format!("qra_{}", qtype.code().to_lowercase());
    let mut prompt = templates.render(&template_name, &[("document", document.text.as_str())])?;
    if variant > 0 {
        prompt.push_str(&format!(
            "\nWrite variation {variant}, different from earlier ones.\n"
        ));
    }
    let (gateway, model) = llm;
    let completion = gateway.chat_complete(&ChatRequest::new(model, &prompt))?;

    let parsed = match parse_question_answer(&completion) {
        Some(pair) => pair,
        None => {
            let reminder = format!(
                "{prompt}\nReminder: respond with exactly two sections, `Question:` then `Answer:`.\n"
            );
            let retry = gateway.chat_complete(&ChatRequest::new(model, reminder))?;
            parse_question_answer(&retry).ok_or(PipelineError::Unparseable {
                stage: "generate_qra",
                transcript: retry,
            })?
        }
    };

    if qtype == QuestionType::Unanswerable {
        let lower = parsed.1.to_lowercase();
        if !INSUFFICIENCY_MARKERS.iter().any(|m| lower.contains(m)) {
            warnings.push(format!(
                "unanswerable draft answer does not assert insufficiency: {}",
                truncate_for_log(&parsed.1)
            ));
        }
    }

    Ok(QraDraft {
        question: parsed.0,
        answer: parsed.1,
        question_type: qtype,
        references: Vec::new(),
        refinement_log: Vec::new(),
    })
}

fn parse_question_answer(completion: &str) -> Option<(String, String)> {
    let q_start = completion.find("Question:")? + "Question:".len();
    let a_marker = completion[q_start..].find("Answer:")?;
    let question = completion[q_start..q_start + a_marker].trim().to_string();
    let answer = completion[q_start + a_marker + "Answer:".len()..]
        .trim()
        .to_string();
    if question.is_empty() || answer.is_empty() {
        return None;
    }
    Some((question, answer))
}

fn truncate_for_log(text: &str) -> String {
    let mut s: String = text.chars().take(60).collect();
    if s.len() < text.len() {
        s.push('…');
    }
    s
}

// ---------------------------------------------------------------------------
// Reference extraction
// ---------------------------------------------------------------------------

/// Ask the LLM for supporting excerpts and keep only those that locate
/// verbatim (after whitespace collapsing) in the document. Unlocatable
/// excerpts are dropped with a warning so the verbatim invariant the
/// retrieval metrics rely on always holds.
pub fn extract_references(
    document: &Document,
    draft: &mut QraDraft,
    templates: &TemplateSet,
    llm: (&Gateway, &str),
    warnings: &mut Warnings,
) -> Result<(), PipelineError> {
    let prompt = templates.render(
        "reference_extraction",
        &[
            ("document", document.text.as_str()),
            ("question", draft.question.as_str()),
            ("answer", draft.answer.as_str()),
        ],
    )?;
    let (gateway, model) = llm;
    let completion = gateway.chat_complete(&ChatRequest::new(model, prompt))?;
    if completion.trim().eq_ignore_ascii_case("none") {
        return Ok(());
    }
    for excerpt in parse_numbered_list(&completion) {
        match locate(&document.text, &excerpt) {
            Some(span) => draft.references.push(LocatedReference {
                reference: GroundTruthReference {
                    source_document_id: document.id.clone(),
                    text: excerpt,
                },
                span,
            }),
            None => warnings.push(format!(
                "dropped unlocatable reference: {}",
                truncate_for_log(&excerpt)
            )),
        }
    }
    Ok(())
}

/// Find `needle` in `haystack` ignoring whitespace runs; returns the byte
/// span of the match in the original text.
pub fn locate(haystack: &str, needle: &str) -> Option<Range<usize>> {
    let mut collapsed = String::new();
    let mut offsets: Vec<usize> = Vec::new();
    let mut pending_space = false;
    for (idx, ch) in haystack.char_indices() {
        if ch.is_whitespace() {
            pending_space = !collapsed.is_empty();
            continue;
        }
        if pending_space {
            collapsed.push(' ');
            offsets.push(idx);
            pending_space = false;
        }
        let mut buf = [0u8; 4];
        let encoded = ch.encode_utf8(&mut buf);
        for _ in 0..encoded.len() {
            offsets.push(idx);
        }
        collapsed.push_str(encoded);
    }

    let target = textproc::normalize(needle);
    if target.is_empty() {
        return None;
    }
    let pos = collapsed.find(&target)?;
    let start = offsets[pos];
    let last_char_start = offsets[pos + target.len() - 1];
    let last_char_len = haystack[last_char_start..].chars().next()?.len_utf8();
    Some(start..last_char_start + last_char_len)
}

/// Parse lines of the form `1. text` (or `1) text`), in order.
pub fn parse_numbered_list(completion: &str) -> Vec<String> {
    completion
        .lines()
        .filter_map(|line| {
            let line = line.trim();
            let (number, rest) = line.split_once(['.', ')'])?;
            if number.is_empty() || !number.chars().all(|c| c.is_ascii_digit()) {
                return None;
            }
            let item = rest.trim();
            (!item.is_empty()).then(|| item.to_string())
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Answer refinement
// ---------------------------------------------------------------------------

/// Align the answer with its references over up to `rounds` rounds: the LLM
/// proposes `ADD:`/`DELETE:` edits (or `NO_EDITS`), which are applied and
/// logged. A round without applicable edits stops the loop early. On a
/// gateway failure the draft keeps the state of the last completed round.
pub fn refine_answer(
    draft: &mut QraDraft,
    templates: &TemplateSet,
    llm: (&Gateway, &str),
    rounds: usize,
    warnings: &mut Warnings,
) -> Result<(), PipelineError> {
    let (gateway, model) = llm;
    for round in 1..=rounds {
        let references: String = draft
            .references
            .iter()
            .enumerate()
            .map(|(i, r)| format!("{}. {}\n", i + 1, r.reference.text))
            .collect();
        let prompt = templates.render(
            "answer_refinement",
            &[
                ("question", draft.question.as_str()),
                ("answer", draft.answer.as_str()),
                ("references", references.trim_end()),
            ],
        )?;
        let completion = gateway.chat_complete(&ChatRequest::new(model, prompt))?;
        if completion.trim().eq_ignore_ascii_case("no_edits") {
            break;
        }

        let mut edited = false;
        let mut answer = draft.answer.clone();
        for line in completion.lines() {
            let line = line.trim();
            if let Some(addition) = line.strip_prefix("ADD:") {
                let addition = addition.trim();
                if addition.is_empty() {
                    continue;
                }
                if answer.is_empty() {
                    answer = addition.to_string();
                } else {
                    answer = format!("{answer} {addition}");
                }
                draft.refinement_log.push(RefinementEdit {
                    round,
                    kind: EditKind::Add,
                    text: addition.to_string(),
                });
                edited = true;
            } else if let Some(removal) = line.strip_prefix("DELETE:") {
                let removal = removal.trim();
                if removal.is_empty() {
                    continue;
                }
                if let Some(at) = answer.find(removal) {
                    answer.replace_range(at..at + removal.len(), "");
                    answer = textproc::normalize(&answer);
                    draft.refinement_log.push(RefinementEdit {
                        round,
                        kind: EditKind::Delete,
                        text: removal.to_string(),
                    });
                    edited = true;
                } else {
                    warnings.push(format!(
                        "refinement DELETE target not in answer: {}",
                        truncate_for_log(removal)
                    ));
                }
            }
        }
        draft.answer = answer;
        if !edited {
            break;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Keypoint extraction
// ---------------------------------------------------------------------------

/// Distill the answer into keypoints via the numbered-list prompt. Warns
/// when the count falls outside 3–5.
pub fn extract_keypoints(
    question: &str,
    answer: &str,
    templates: &TemplateSet,
    llm: (&Gateway, &str),
    warnings: &mut Warnings,
) -> Result<Vec<String>, PipelineError> {
    if answer.is_empty() {
        return Err(PipelineError::EmptyAnswer);
    }
    let prompt = templates.render(
        "keypoint_extraction",
        &[("question", question), ("ground_truth", answer)],
    )?;
    let (gateway, model) = llm;
    let completion = gateway.chat_complete(&ChatRequest::new(model, &prompt))?;
    let mut keypoints = parse_numbered_list(&completion);
    if keypoints.is_empty() {
        let reminder = format!(
            "{prompt}\nReminder: respond with a numbered list only, one key point per line.\n"
        );
        let retry = gateway.chat_complete(&ChatRequest::new(model, reminder))?;
        keypoints = parse_numbered_list(&retry);
        if keypoints.is_empty() {
            return Err(PipelineError::Unparseable {
                stage: "extract_keypoints",
                transcript: retry,
            });
        }
    }
    if !(3..=5).contains(&keypoints.len()) {
        warnings.push(format!("keypoints={} outside 3-5", keypoints.len()));
    }
    Ok(keypoints)
}

// ---------------------------------------------------------------------------
// End-to-end pipeline
// ---------------------------------------------------------------------------

/// Driver settings for one generation run, as read from a pipeline spec
/// JSON file. The schema and rules paths are resolved against the spec
/// file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub scenario: String,
    pub language: LanguageTag,
    pub schema: String,
    pub rules: String,
    pub seed: u64,
    pub documents: usize,
    #[serde(default = "default_question_types")]
    pub question_types: Vec<String>,
    #[serde(default = "default_records_per_type")]
    pub records_per_type: usize,
    #[serde(default = "default_refine_rounds")]
    pub refine_rounds: usize,
    /// meta key -> config leaf path.
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub chat_model: String,
    pub doc_id_prefix: String,
}

fn default_question_types() -> Vec<String> {
    QuestionType::ALL.iter().map(|q| q.code().to_string()).collect()
}

fn default_records_per_type() -> usize {
    1
}

fn default_refine_rounds() -> usize {
    2
}

impl PipelineSpec {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&body).map_err(|source| PipelineError::Json {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Run the whole generation flow for one spec: normalize the schema, then
/// per document generate a config, the document, and one record per
/// question type. Deterministic given the seed and a populated gateway
/// cache.
pub fn run_pipeline(
    spec: &PipelineSpec,
    base_dir: &Path,
    templates: &TemplateSet,
    gateway: &Gateway,
    warnings: &mut Warnings,
) -> Result<crate::corpus::EvalDataset, PipelineError> {
    let schema = normalize_schema(&load_schema(base_dir.join(&spec.schema))?);
    let rules = RuleTable::from_file(base_dir.join(&spec.rules))?;
    let llm = (gateway, spec.chat_model.as_str());

    let question_types: Vec<QuestionType> = spec
        .question_types
        .iter()
        .filter_map(|code| QuestionType::from_code(code))
        .collect();

    let mut dataset = crate::corpus::EvalDataset::default();
    for d in 0..spec.documents {
        let doc_seed = leaf_seed(spec.seed, "document", &d.to_string());
        let config = generate_config(&schema, &rules, doc_seed, Some(llm))?;
        let doc_id = format!("{}-{d:03}", spec.doc_id_prefix);
        let document = generate_document(
            &doc_id,
            &config,
            &spec.scenario,
            spec.language,
            &spec.meta,
            templates,
            llm,
            warnings,
        )?;

        for &qtype in &question_types {
            for variant in 0..spec.records_per_type {
                let mut draft =
                    generate_qra(&document, qtype, variant, templates, llm, warnings)?;
                extract_references(&document, &mut draft, templates, llm, warnings)?;
                refine_answer(&mut draft, templates, llm, spec.refine_rounds, warnings)?;
                let keypoints =
                    extract_keypoints(&draft.question, &draft.answer, templates, llm, warnings)?;
                let record_id = format!("{doc_id}-{}-{variant}", qtype.code());
                dataset.records.push(QraRecord {
                    id: record_id,
                    question: draft.question,
                    question_type: qtype,
                    document_ids: vec![doc_id.clone()],
                    references: draft.references.into_iter().map(|r| r.reference).collect(),
                    answer: draft.answer,
                    keypoints,
                });
            }
        }
        dataset.documents.push(document);
    }
    dataset.validate()?;
    Ok(dataset)
}
