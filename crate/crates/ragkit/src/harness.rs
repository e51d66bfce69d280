//! End-to-end evaluation runs: retrieve, generate (or take the gold answer),
//! judge, aggregate, and sweep hyperparameters.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{self, EvalDataset, QraRecord, QuestionType, Severity};
use crate::gateway::{ChatRequest, Gateway};
use crate::judge::{classify_keypoints, JudgeBackend, MockJudge, RemoteJudge};
use crate::metrics::generation::{bleu, compute_keypoint_metrics, rouge_l};
use crate::metrics::retrieval::{compute_eir, compute_recall};
use crate::report::{MetricReport, ReportRow, ReportSettings};
use crate::retrieval::{build_index, chunk_document, retrieve_topk, Chunk, Index, RetrieverKind, RetrieverSpec};
use crate::templates::TemplateSet;
use crate::textproc::LanguageTag;

#[derive(Error, Debug)]
pub enum HarnessError {
    #[error(transparent)]
    Corpus(#[from] corpus::CorpusError),
    #[error(transparent)]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error(transparent)]
    Template(#[from] crate::templates::TemplateError),
    #[error("invalid dataset: record {record_id}: {message}")]
    InvalidDataset { record_id: String, message: String },
    #[error("generator or judge needs a gateway, none configured")]
    MissingGateway,
    #[error(
        "judge failure rate too high: {failures}/{total} records failed (threshold {threshold})"
    )]
    JudgeFailureRate {
        failures: usize,
        total: usize,
        threshold: f64,
    },
    #[error("empty sweep grid")]
    EmptyGrid,
}

/// Where answers come from.
#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorMode {
    /// Score the dataset's own gold answers; calibrates the metric ceiling.
    OracleAnswer,
    /// Generate answers with a chat model over the retrieved chunks.
    Model { model: String },
}

/// Which judge classifies keypoints.
#[derive(Debug, Clone, PartialEq)]
pub enum JudgeKind {
    Mock,
    Remote { model: String },
}

/// Grouping dimensions for report rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    QuestionType,
    Scenario,
    Language,
}

impl Grouping {
    pub const ALL: [Grouping; 3] = [Grouping::QuestionType, Grouping::Scenario, Grouping::Language];

    fn name(&self) -> &'static str {
        match self {
            Grouping::QuestionType => "question_type",
            Grouping::Scenario => "scenario",
            Grouping::Language => "language",
        }
    }
}

/// One full evaluation configuration.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub dataset_path: PathBuf,
    pub retriever: RetrieverSpec,
    /// Prefix chunks with document meta (`key: value` lines).
    pub with_meta: bool,
    pub generator: GeneratorMode,
    pub judge: JudgeKind,
    pub grouping: Vec<Grouping>,
    pub seed: u64,
    /// Evaluate only this many records per (question type, scenario,
    /// language) group, sampled with the seed.
    pub sample_per_type: Option<usize>,
    /// Abort when judge failures exceed this fraction of records.
    pub judge_failure_threshold: f64,
    pub workers: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            dataset_path: PathBuf::new(),
            retriever: RetrieverSpec::default(),
            with_meta: true,
            generator: GeneratorMode::OracleAnswer,
            judge: JudgeKind::Mock,
            grouping: Grouping::ALL.to_vec(),
            seed: 0,
            sample_per_type: None,
            judge_failure_threshold: 0.25,
            workers: 1,
        }
    }
}

/// A sweep grid point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepPoint {
    pub chunk_size: usize,
    pub top_k: usize,
}

/// The paired chunk-size / retrieval-depth settings swept by default.
pub const DEFAULT_SWEEP_GRID: [SweepPoint; 3] = [
    SweepPoint { chunk_size: 128, top_k: 20 },
    SweepPoint { chunk_size: 256, top_k: 10 },
    SweepPoint { chunk_size: 512, top_k: 5 },
];

/// The depth-only sweep with chunk size fixed at the default.
pub const TOPK_SWEEP: [SweepPoint; 3] = [
    SweepPoint { chunk_size: 512, top_k: 2 },
    SweepPoint { chunk_size: 512, top_k: 5 },
    SweepPoint { chunk_size: 512, top_k: 8 },
];

/// Outcome of one sweep point; a failed point carries its error instead of
/// failing the sweep.
#[derive(Debug)]
pub struct SweepRun {
    pub point: SweepPoint,
    pub result: Result<MetricReport, HarnessError>,
}

struct RecordEval {
    question_type: QuestionType,
    scenario: String,
    language: LanguageTag,
    recall: Option<f64>,
    eir: Option<f64>,
    completeness: Option<f64>,
    hallucination: Option<f64>,
    irrelevancy: Option<f64>,
    rouge_l: Option<f64>,
    bleu: Option<f64>,
    failed: bool,
}

/// Load the dataset at `spec.dataset_path` and evaluate it.
pub fn run_evaluation(
    spec: &ExperimentSpec,
    gateway: Option<Arc<Gateway>>,
    warnings: &mut Vec<String>,
) -> Result<MetricReport, HarnessError> {
    let dataset = corpus::load_dataset(&spec.dataset_path)?;
    evaluate_dataset(&dataset, spec, gateway, warnings)
}

/// Evaluate an already-loaded dataset: chunk and index the corpus once, then
/// per record retrieve, obtain an answer, judge keypoints, and compute every
/// metric. Deterministic given the seed and a populated gateway cache.
pub fn evaluate_dataset(
    dataset: &EvalDataset,
    spec: &ExperimentSpec,
    gateway: Option<Arc<Gateway>>,
    warnings: &mut Vec<String>,
) -> Result<MetricReport, HarnessError> {
    validate_dataset(dataset)?;
    let needs_gateway = matches!(spec.generator, GeneratorMode::Model { .. })
        || matches!(spec.judge, JudgeKind::Remote { .. })
        || matches!(spec.retriever.kind, RetrieverKind::Embedding { .. });
    if needs_gateway && gateway.is_none() {
        return Err(HarnessError::MissingGateway);
    }

    let mut chunks: Vec<Chunk> = Vec::new();
    for doc in &dataset.documents {
        chunks.extend(chunk_document(doc, spec.retriever.chunk_size, spec.with_meta)?);
    }
    let index = build_index(&chunks, &spec.retriever, gateway.clone())?;

    let judge: Box<dyn JudgeBackend> = match &spec.judge {
        JudgeKind::Mock => Box::new(MockJudge),
        JudgeKind::Remote { model } => Box::new(RemoteJudge::new(
            gateway.clone().ok_or(HarnessError::MissingGateway)?,
            model.clone(),
        )),
    };
    let templates = TemplateSet::embedded();

    let selected = select_records(dataset, spec);
    let outcomes = run_records(
        &selected,
        dataset,
        &index,
        spec,
        gateway.as_deref(),
        judge.as_ref(),
        &templates,
    );

    let mut evals = Vec::with_capacity(outcomes.len());
    for (eval, mut record_warnings) in outcomes {
        warnings.append(&mut record_warnings);
        evals.push(eval);
    }

    let failures = evals.iter().filter(|e| e.failed).count();
    if !evals.is_empty() {
        let rate = failures as f64 / evals.len() as f64;
        if rate > spec.judge_failure_threshold {
            return Err(HarnessError::JudgeFailureRate {
                failures,
                total: evals.len(),
                threshold: spec.judge_failure_threshold,
            });
        }
    }

    Ok(aggregate(spec, &evals))
}

fn validate_dataset(dataset: &EvalDataset) -> Result<(), HarnessError> {
    dataset.validate()?;
    for record in &dataset.records {
        if record.document_ids.is_empty() {
            return Err(HarnessError::InvalidDataset {
                record_id: record.id.clone(),
                message: "no document_ids".into(),
            });
        }
        for violation in corpus::validate_record(record, dataset) {
            if violation.severity == Severity::Error {
                return Err(HarnessError::InvalidDataset {
                    record_id: record.id.clone(),
                    message: format!("{}: {}", violation.field, violation.message),
                });
            }
        }
    }
    Ok(())
}

fn group_seed(seed: u64, group: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(group.as_bytes());
    u64::from_le_bytes(hasher.finalize()[..8].try_into().unwrap())
}

/// Apply `--sample-per-type`: a seeded sample of n records per
/// (question type, scenario, language) group, keeping dataset order.
fn select_records<'a>(dataset: &'a EvalDataset, spec: &ExperimentSpec) -> Vec<&'a QraRecord> {
    let Some(per_type) = spec.sample_per_type else {
        return dataset.records.iter().collect();
    };
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (idx, record) in dataset.records.iter().enumerate() {
        let (scenario, language) = record_origin(dataset, record);
        let key = format!("{}/{}/{}", record.question_type.code(), scenario, language);
        groups.entry(key).or_default().push(idx);
    }
    let mut keep: Vec<usize> = Vec::new();
    for (key, mut indices) in groups {
        let mut rng = ChaCha8Rng::seed_from_u64(group_seed(spec.seed, &key));
        indices.shuffle(&mut rng);
        indices.truncate(per_type);
        keep.extend(indices);
    }
    keep.sort_unstable();
    keep.into_iter().map(|i| &dataset.records[i]).collect()
}

fn record_origin<'a>(dataset: &'a EvalDataset, record: &QraRecord) -> (&'a str, LanguageTag) {
    record
        .document_ids
        .first()
        .and_then(|id| dataset.document(id))
        .map(|d| (d.scenario.as_str(), d.language))
        .unwrap_or(("", LanguageTag::En))
}

/// Evaluate records on a small worker pool; results merge in record order so
/// output is independent of scheduling.
fn run_records(
    records: &[&QraRecord],
    dataset: &EvalDataset,
    index: &Index,
    spec: &ExperimentSpec,
    gateway: Option<&Gateway>,
    judge: &dyn JudgeBackend,
    templates: &TemplateSet,
) -> Vec<(RecordEval, Vec<String>)> {
    let workers = spec.workers.max(1).min(records.len().max(1));
    if workers <= 1 {
        return records
            .iter()
            .map(|r| evaluate_record(r, dataset, index, spec, gateway, judge, templates))
            .collect();
    }
    let mut slots: Vec<Option<(RecordEval, Vec<String>)>> =
        (0..records.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for worker in 0..workers {
            let records = &records[..];
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut idx = worker;
                while idx < records.len() {
                    out.push((
                        idx,
                        evaluate_record(
                            records[idx],
                            dataset,
                            index,
                            spec,
                            gateway,
                            judge,
                            templates,
                        ),
                    ));
                    idx += workers;
                }
                out
            }));
        }
        for handle in handles {
            for (idx, outcome) in handle.join().expect("worker panicked") {
                slots[idx] = Some(outcome);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("all slots filled")).collect()
}

fn evaluate_record(
    record: &QraRecord,
    dataset: &EvalDataset,
    index: &Index,
    spec: &ExperimentSpec,
    gateway: Option<&Gateway>,
    judge: &dyn JudgeBackend,
    templates: &TemplateSet,
) -> (RecordEval, Vec<String>) {
    let (scenario, language) = record_origin(dataset, record);
    let mut eval = RecordEval {
        question_type: record.question_type,
        scenario: scenario.to_string(),
        language,
        recall: None,
        eir: None,
        completeness: None,
        hallucination: None,
        irrelevancy: None,
        rouge_l: None,
        bleu: None,
        failed: false,
    };
    let mut warnings = Vec::new();

    let retrieved: Vec<String> = match retrieve_topk(
        index,
        &record.id,
        &record.question,
        spec.retriever.top_k,
        language,
    ) {
        Ok(result) => result
            .ranked
            .iter()
            .filter_map(|(id, _)| index.chunk_text(id).map(str::to_string))
            .collect(),
        Err(e) => {
            warnings.push(format!("record {}: retrieval failed: {e}", record.id));
            eval.failed = true;
            return (eval, warnings);
        }
    };

    if !record.references.is_empty() {
        match compute_recall(&record.references, &retrieved, language) {
            Ok(outcome) => eval.recall = Some(outcome.recall),
            Err(e) => warnings.push(format!("record {}: recall failed: {e}", record.id)),
        }
        if !retrieved.is_empty() {
            match compute_eir(&record.references, &retrieved, language) {
                Ok(eir) => eval.eir = Some(eir),
                Err(e) => warnings.push(format!("record {}: EIR failed: {e}", record.id)),
            }
        }
    }

    let answer = match &spec.generator {
        GeneratorMode::OracleAnswer => record.answer.clone(),
        GeneratorMode::Model { model } => {
            let context = retrieved
                .iter()
                .enumerate()
                .map(|(i, text)| format!("[{}] {}\n", i + 1, text))
                .collect::<String>();
            let prompt = match templates.render(
                "generate_answer",
                &[("context", context.as_str()), ("question", record.question.as_str())],
            ) {
                Ok(p) => p,
                Err(e) => {
                    warnings.push(format!("record {}: prompt failed: {e}", record.id));
                    eval.failed = true;
                    return (eval, warnings);
                }
            };
            let Some(gateway) = gateway else {
                warnings.push(format!("record {}: no gateway for generation", record.id));
                eval.failed = true;
                return (eval, warnings);
            };
            match gateway.chat_complete(&ChatRequest::new(model, prompt)) {
                Ok(answer) => answer,
                Err(e) => {
                    warnings.push(format!("record {}: generation failed: {e}", record.id));
                    eval.failed = true;
                    return (eval, warnings);
                }
            }
        }
    };

    eval.rouge_l = Some(rouge_l(&answer, &record.answer, language));
    eval.bleu = Some(bleu(&answer, &record.answer, language));

    if record.keypoints.is_empty() {
        warnings.push(format!("record {}: no keypoints, judge skipped", record.id));
        eval.failed = true;
        return (eval, warnings);
    }
    match classify_keypoints(
        &record.id,
        &record.question,
        &answer,
        &record.keypoints,
        judge,
        templates,
    ) {
        Ok(verdicts) => match compute_keypoint_metrics(&verdicts) {
            Ok(triple) => {
                eval.completeness = Some(triple.completeness());
                eval.hallucination = Some(triple.hallucination());
                eval.irrelevancy = Some(triple.irrelevancy());
            }
            Err(e) => {
                warnings.push(format!("record {}: metrics failed: {e}", record.id));
                eval.failed = true;
            }
        },
        Err(e) => {
            warnings.push(format!("record {}: judge failed: {e}", record.id));
            eval.failed = true;
        }
    }
    (eval, warnings)
}

#[derive(Default, Clone, Copy)]
struct MeanAcc {
    sum: f64,
    n: usize,
}

impl MeanAcc {
    fn push(&mut self, value: Option<f64>) {
        if let Some(v) = value {
            self.sum += v;
            self.n += 1;
        }
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

#[derive(Default, Clone)]
struct RowAcc {
    recall: MeanAcc,
    eir: MeanAcc,
    completeness: MeanAcc,
    hallucination: MeanAcc,
    irrelevancy: MeanAcc,
    rouge_l: MeanAcc,
    bleu: MeanAcc,
    n: usize,
    failures: usize,
}

impl RowAcc {
    fn push(&mut self, eval: &RecordEval) {
        if eval.failed {
            self.failures += 1;
            return;
        }
        self.n += 1;
        self.recall.push(eval.recall);
        self.eir.push(eval.eir);
        self.completeness.push(eval.completeness);
        self.hallucination.push(eval.hallucination);
        self.irrelevancy.push(eval.irrelevancy);
        self.rouge_l.push(eval.rouge_l);
        self.bleu.push(eval.bleu);
    }

    fn row(&self, dimension: &str, key: &str) -> ReportRow {
        ReportRow {
            dimension: dimension.to_string(),
            key: key.to_string(),
            recall: self.recall.mean(),
            eir: self.eir.mean(),
            completeness: self.completeness.mean(),
            hallucination: self.hallucination.mean(),
            irrelevancy: self.irrelevancy.mean(),
            rouge_l: self.rouge_l.mean(),
            bleu: self.bleu.mean(),
            n: self.n,
            failures: self.failures,
        }
    }
}

/// Macro-average the group rows of one dimension into its `Avg.` row.
fn average_row(dimension: &str, rows: &[ReportRow]) -> ReportRow {
    let mut acc: [MeanAcc; 7] = Default::default();
    let mut n = 0;
    let mut failures = 0;
    for row in rows {
        acc[0].push(row.recall);
        acc[1].push(row.eir);
        acc[2].push(row.completeness);
        acc[3].push(row.hallucination);
        acc[4].push(row.irrelevancy);
        acc[5].push(row.rouge_l);
        acc[6].push(row.bleu);
        n += row.n;
        failures += row.failures;
    }
    ReportRow {
        dimension: dimension.to_string(),
        key: "Avg.".to_string(),
        recall: acc[0].mean(),
        eir: acc[1].mean(),
        completeness: acc[2].mean(),
        hallucination: acc[3].mean(),
        irrelevancy: acc[4].mean(),
        rouge_l: acc[5].mean(),
        bleu: acc[6].mean(),
        n,
        failures,
    }
}

fn aggregate(spec: &ExperimentSpec, evals: &[RecordEval]) -> MetricReport {
    let mut rows = Vec::new();
    for grouping in &spec.grouping {
        let dimension = grouping.name();
        let mut groups: BTreeMap<String, RowAcc> = BTreeMap::new();
        for eval in evals {
            let key = match grouping {
                Grouping::QuestionType => eval.question_type.code().to_string(),
                Grouping::Scenario => eval.scenario.clone(),
                Grouping::Language => eval.language.to_string(),
            };
            groups.entry(key).or_default().push(eval);
        }
        let mut dim_rows = Vec::new();
        match grouping {
            // Question types render in their canonical order.
            Grouping::QuestionType => {
                for qt in QuestionType::ALL {
                    if let Some(acc) = groups.get(qt.code()) {
                        dim_rows.push(acc.row(dimension, qt.code()));
                    }
                }
            }
            _ => {
                for (key, acc) in &groups {
                    dim_rows.push(acc.row(dimension, key));
                }
            }
        }
        let avg = average_row(dimension, &dim_rows);
        rows.extend(dim_rows);
        rows.push(avg);
    }
    MetricReport {
        settings: ReportSettings {
            dataset: spec.dataset_path.display().to_string(),
            retriever: match &spec.retriever.kind {
                RetrieverKind::Bm25 => "bm25".to_string(),
                RetrieverKind::Embedding { endpoint_model } => {
                    format!("embedding:{endpoint_model}")
                }
            },
            chunk_size: spec.retriever.chunk_size,
            top_k: spec.retriever.top_k,
            generator: match &spec.generator {
                GeneratorMode::OracleAnswer => "oracle".to_string(),
                GeneratorMode::Model { model } => model.clone(),
            },
            judge: match &spec.judge {
                JudgeKind::Mock => "mock".to_string(),
                JudgeKind::Remote { model } => model.clone(),
            },
            seed: spec.seed,
        },
        rows,
    }
}

/// One [`evaluate_dataset`] run per grid point over a shared dataset load,
/// rebuilding chunks and the index at each point. A failing point is
/// reported in its slot, not fatal to the sweep.
pub fn run_sweep(
    base: &ExperimentSpec,
    grid: &[SweepPoint],
    gateway: Option<Arc<Gateway>>,
    warnings: &mut Vec<String>,
) -> Result<Vec<SweepRun>, HarnessError> {
    if grid.is_empty() {
        return Err(HarnessError::EmptyGrid);
    }
    let dataset = corpus::load_dataset(&base.dataset_path)?;
    let mut runs = Vec::with_capacity(grid.len());
    for point in grid {
        let mut spec = base.clone();
        spec.retriever.chunk_size = point.chunk_size;
        spec.retriever.top_k = point.top_k;
        let result = evaluate_dataset(&dataset, &spec, gateway.clone(), warnings);
        runs.push(SweepRun {
            point: *point,
            result,
        });
    }
    Ok(runs)
}
