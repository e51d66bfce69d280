//! Aggregated metric reports and their CSV / Markdown / JSON renderings.
//!
//! Percentages render at two decimals. Metrics that never applied to a group
//! (e.g. Recall over records with no references) render as `-`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum ReportError {
    #[error("empty report")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed report JSON in {path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            other => Err(format!("unknown format {other:?} (csv|markdown|json)")),
        }
    }
}

/// Settings echoed into the report so a rendered table is self-describing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportSettings {
    pub dataset: String,
    pub retriever: String,
    pub chunk_size: usize,
    pub top_k: usize,
    pub generator: String,
    pub judge: String,
    pub seed: u64,
}

/// One aggregated row: a group key within a grouping dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dimension: String,
    pub key: String,
    pub recall: Option<f64>,
    pub eir: Option<f64>,
    pub completeness: Option<f64>,
    pub hallucination: Option<f64>,
    pub irrelevancy: Option<f64>,
    pub rouge_l: Option<f64>,
    pub bleu: Option<f64>,
    pub n: usize,
    pub failures: usize,
}

/// The aggregated evaluation result: one row set per grouping dimension,
/// each closed by an `Avg.` row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub settings: ReportSettings,
    pub rows: Vec<ReportRow>,
}

impl MetricReport {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, ReportError> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|source| ReportError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&body).map_err(|source| ReportError::Json {
            path: path.display().to_string(),
            source,
        })
    }

    /// Grouping dimensions in first-appearance order.
    pub fn dimensions(&self) -> Vec<&str> {
        let mut seen = Vec::new();
        for row in &self.rows {
            if !seen.contains(&row.dimension.as_str()) {
                seen.push(row.dimension.as_str());
            }
        }
        seen
    }
}

const METRIC_HEADERS: [&str; 7] = [
    "Recall",
    "EIR",
    "Completeness",
    "Hallucination",
    "Irrelevancy",
    "Rouge-L",
    "BLEU",
];

fn percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}", v * 100.0),
        None => "-".to_string(),
    }
}

fn metric_cells(row: &ReportRow) -> [String; 7] {
    [
        percent(row.recall),
        percent(row.eir),
        percent(row.completeness),
        percent(row.hallucination),
        percent(row.irrelevancy),
        percent(row.rouge_l),
        percent(row.bleu),
    ]
}

/// CSV with one row per (dimension, key), stable column order.
pub fn render_csv(report: &MetricReport) -> String {
    let mut out = String::new();
    out.push_str("dimension,group");
    for header in METRIC_HEADERS {
        out.push(',');
        out.push_str(header);
    }
    out.push_str(",n,failures\n");
    for row in &report.rows {
        out.push_str(&row.dimension);
        out.push(',');
        out.push_str(&csv_escape(&row.key));
        for cell in metric_cells(row) {
            out.push(',');
            out.push_str(&cell);
        }
        out.push_str(&format!(",{},{}\n", row.n, row.failures));
    }
    out
}

fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Markdown: one table per grouping dimension.
pub fn render_markdown(report: &MetricReport) -> String {
    let settings = &report.settings;
    let mut out = format!(
        "# Evaluation report\n\ndataset: `{}` | retriever: {} | chunk_size: {} | top_k: {} | \
         generator: {} | judge: {} | seed: {}\n",
        settings.dataset,
        settings.retriever,
        settings.chunk_size,
        settings.top_k,
        settings.generator,
        settings.judge,
        settings.seed,
    );
    for dimension in report.dimensions() {
        out.push_str(&format!("\n## By {dimension}\n\n"));
        out.push_str(&format!("| {dimension} |"));
        for header in METRIC_HEADERS {
            out.push_str(&format!(" {header} |"));
        }
        out.push_str(" n | failures |\n");
        out.push_str(&"|---".repeat(METRIC_HEADERS.len() + 3));
        out.push_str("|\n");
        for row in report.rows.iter().filter(|r| r.dimension == dimension) {
            out.push_str(&format!("| {} |", row.key));
            for cell in metric_cells(row) {
                out.push_str(&format!(" {cell} |"));
            }
            out.push_str(&format!(" {} | {} |\n", row.n, row.failures));
        }
    }
    out
}

pub fn render_json(report: &MetricReport) -> String {
    let mut body = serde_json::to_string_pretty(report).expect("reports serialize");
    body.push('\n');
    body
}

pub fn render(report: &MetricReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::Markdown => render_markdown(report),
        ReportFormat::Json => render_json(report),
    }
}

/// Render and write a report file.
pub fn emit_report(
    report: &MetricReport,
    format: ReportFormat,
    path: impl AsRef<Path>,
) -> Result<(), ReportError> {
    if report.rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let path = path.as_ref();
    std::fs::write(path, render(report, format)).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_row_report() -> MetricReport {
        MetricReport {
            settings: ReportSettings {
                dataset: "demo.jsonl".into(),
                retriever: "bm25".into(),
                chunk_size: 512,
                top_k: 5,
                generator: "oracle".into(),
                judge: "mock".into(),
                seed: 0,
            },
            rows: vec![ReportRow {
                dimension: "language".into(),
                key: "EN".into(),
                recall: Some(1.0),
                eir: Some(1.0 / 3.0),
                completeness: Some(1.0 / 3.0),
                hallucination: Some(1.0 / 3.0),
                irrelevancy: Some(1.0 / 3.0),
                rouge_l: Some(0.5),
                bleu: None,
                n: 7,
                failures: 0,
            }],
        }
    }

    #[test]
    fn csv_has_header_and_one_row() {
        let csv = render_csv(&one_row_report());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "dimension,group,Recall,EIR,Completeness,Hallucination,Irrelevancy,Rouge-L,BLEU,n,failures"
        );
        assert_eq!(lines[1], "language,EN,100.00,33.33,33.33,33.33,33.33,50.00,-,7,0");
    }

    #[test]
    fn thirds_render_as_33_33() {
        assert_eq!(percent(Some(1.0 / 3.0)), "33.33");
    }

    #[test]
    fn markdown_emits_one_table_per_dimension() {
        let mut report = one_row_report();
        let mut second = report.rows[0].clone();
        second.dimension = "question_type".into();
        second.key = "FQ".into();
        report.rows.push(second);
        let md = render_markdown(&report);
        assert!(md.contains("## By language"));
        assert!(md.contains("## By question_type"));
        assert!(md.contains("| EN | 100.00 |"));
    }

    #[test]
    fn json_roundtrips() {
        let report = one_row_report();
        let json = render_json(&report);
        let parsed: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, report);
    }

    #[test]
    fn empty_report_is_rejected() {
        let report = MetricReport {
            settings: ReportSettings::default(),
            rows: vec![],
        };
        let dir = tempfile::tempdir().unwrap();
        let err = emit_report(&report, ReportFormat::Csv, dir.path().join("r.csv")).unwrap_err();
        assert!(matches!(err, ReportError::Empty));
    }
}
