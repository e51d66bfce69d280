//! Command-line harness: generate datasets, run evaluations, sweep
//! hyperparameters, and render reports.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ragkit::gateway::{Gateway, GatewayConfig};
use ragkit::harness::{
    run_sweep, ExperimentSpec, GeneratorMode, Grouping, JudgeKind, SweepPoint, DEFAULT_SWEEP_GRID,
};
use ragkit::pipeline::PipelineSpec;
use ragkit::report::{emit_report, render, MetricReport, ReportFormat};
use ragkit::retrieval::{RetrieverKind, RetrieverSpec};
use ragkit::templates::TemplateSet;

#[derive(Parser)]
#[command(name = "ragkit", version, about = "Generate and evaluate RAG benchmark datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a pipeline spec (schema + rules + LLM).
    Generate(GenerateArgs),
    /// Evaluate a RAG configuration over a dataset.
    Eval(EvalArgs),
    /// Run an evaluation per (chunk size, top-k) grid point.
    Sweep(SweepArgs),
    /// Re-render a saved JSON report as CSV or Markdown.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Pipeline spec JSON; schema/rules paths resolve against its directory.
    #[arg(long)]
    spec: PathBuf,
    /// Output dataset path (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Directory of prompt template overrides.
    #[arg(long)]
    templates: Option<PathBuf>,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// Where to write the report (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// Grid points as chunk:topk pairs, e.g. "128:20,256:10,512:5".
    #[arg(long)]
    grid: Option<String>,
    /// Depth-only grid, e.g. "2,5,8"; chunk size stays at --chunk-size.
    #[arg(long)]
    topk_grid: Option<String>,
    /// Directory for one report file per grid point.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// A report previously saved with --format json.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "markdown")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalCommon {
    /// Evaluation config JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    /// bm25 | embedding
    #[arg(long)]
    retriever: Option<String>,
    /// mock | remote
    #[arg(long)]
    judge: Option<String>,
    /// Score the dataset's gold answers instead of generating.
    #[arg(long)]
    oracle_answers: bool,
    /// Chat model for answer generation.
    #[arg(long)]
    generator_model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sample this many records per question type, scenario, and language.
    #[arg(long)]
    sample_per_type: Option<usize>,
    /// csv | markdown | json
    #[arg(long, default_value = "markdown")]
    format: String,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    gateway: GatewayArgs,
}

#[derive(Args)]
struct GatewayArgs {
    /// OpenAI-compatible endpoint base URL.
    #[arg(long)]
    base_url: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Response cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Serve strictly from the cache; any miss is an error.
    #[arg(long)]
    offline: bool,
}

/// File-backed defaults for `eval`/`sweep`; every field is optional and any
/// flag wins over the file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalFileConfig {
    dataset: Option<PathBuf>,
    chunk_size: Option<usize>,
    top_k: Option<usize>,
    retriever: Option<String>,
    embedding_model: Option<String>,
    judge: Option<String>,
    judge_model: Option<String>,
    generator_model: Option<String>,
    oracle_answers: Option<bool>,
    seed: Option<u64>,
    with_meta: Option<bool>,
    sample_per_type: Option<usize>,
    workers: Option<usize>,
    judge_failure_threshold: Option<f64>,
    base_url: Option<String>,
    api_key_env: Option<String>,
    cache_dir: Option<PathBuf>,
    max_in_flight: Option<usize>,
}

impl EvalFileConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        serde_json::from_str(&body).with_context(|| format!("malformed config {}", path.display()))
    }
}

struct ResolvedEval {
    spec: ExperimentSpec,
    gateway: Option<Arc<Gateway>>,
    format: ReportFormat,
}

fn resolve_eval(common: &EvalCommon) -> Result<ResolvedEval> {
    let file = EvalFileConfig::load(common.config.as_deref())?;

    let dataset_path = common
        .dataset
        .clone()
        .or(file.dataset.clone())
        .context("--dataset is required (flag or config file)")?;

    let retriever_name = common
        .retriever
        .clone()
        .or(file.retriever.clone())
        .unwrap_or_else(|| "bm25".to_string());
    let kind = match retriever_name.as_str() {
        "bm25" => RetrieverKind::Bm25,
        "embedding" => RetrieverKind::Embedding {
            endpoint_model: file
                .embedding_model
                .clone()
                .unwrap_or_else(|| "bge-m3".to_string()),
        },
        other => bail!("unknown retriever {other:?} (bm25|embedding)"),
    };
    let retriever = RetrieverSpec {
        kind,
        chunk_size: common.chunk_size.or(file.chunk_size).unwrap_or(512),
        top_k: common.top_k.or(file.top_k).unwrap_or(5),
    };

    let oracle = common.oracle_answers || file.oracle_answers.unwrap_or(false);
    let generator_model = common.generator_model.clone().or(file.generator_model.clone());
    let generator = match generator_model {
        Some(model) if !oracle => GeneratorMode::Model { model },
        _ => GeneratorMode::OracleAnswer,
    };

    let judge_name = common
        .judge
        .clone()
        .or(file.judge.clone())
        .unwrap_or_else(|| "mock".to_string());
    let judge = match judge_name.as_str() {
        "mock" => JudgeKind::Mock,
        "remote" => JudgeKind::Remote {
            model: file
                .judge_model
                .clone()
                .unwrap_or_else(|| "gpt-4o".to_string()),
        },
        other => bail!("unknown judge {other:?} (mock|remote)"),
    };

    let spec = ExperimentSpec {
        dataset_path,
        retriever,
        with_meta: file.with_meta.unwrap_or(true),
        generator,
        judge,
        grouping: Grouping::ALL.to_vec(),
        seed: common.seed.or(file.seed).unwrap_or(0),
        sample_per_type: common.sample_per_type.or(file.sample_per_type),
        judge_failure_threshold: file.judge_failure_threshold.unwrap_or(0.25),
        workers: common.workers.or(file.workers).unwrap_or(1),
    };

    let needs_gateway = matches!(spec.generator, GeneratorMode::Model { .. })
        || matches!(spec.judge, JudgeKind::Remote { .. })
        || matches!(spec.retriever.kind, RetrieverKind::Embedding { .. });
    let gateway = if needs_gateway {
        Some(Arc::new(build_gateway(&common.gateway, &file)?))
    } else {
        None
    };

    let format: ReportFormat = common
        .format
        .parse()
        .map_err(|e: String| anyhow::anyhow!(e))?;
    Ok(ResolvedEval {
        spec,
        gateway,
        format,
    })
}

fn build_gateway(args: &GatewayArgs, file: &EvalFileConfig) -> Result<Gateway> {
    let cache_dir = args.cache_dir.clone().or(file.cache_dir.clone());
    if args.offline {
        let dir = cache_dir.context("--offline requires --cache-dir")?;
        return Ok(Gateway::offline(dir));
    }
    let mut config = GatewayConfig {
        cache_dir,
        ..GatewayConfig::default()
    };
    if let Some(base_url) = args.base_url.clone().or(file.base_url.clone()) {
        config.base_url = base_url;
    }
    if let Some(api_key_env) = args.api_key_env.clone().or(file.api_key_env.clone()) {
        config.api_key_env = api_key_env;
    }
    if let Some(max_in_flight) = file.max_in_flight {
        config.max_in_flight = max_in_flight;
    }
    Ok(Gateway::new(config))
}

fn parse_grid(args: &SweepArgs, chunk_size: usize) -> Result<Vec<SweepPoint>> {
    if let Some(grid) = &args.grid {
        return grid
            .split(',')
            .map(|pair| {
                let (chunk, k) = pair
                    .split_once(':')
                    .with_context(|| format!("grid point {pair:?} is not chunk:topk"))?;
                Ok(SweepPoint {
                    chunk_size: chunk.trim().parse()?,
                    top_k: k.trim().parse()?,
                })
            })
            .collect();
    }
    if let Some(grid) = &args.topk_grid {
        return grid
            .split(',')
            .map(|k| {
                Ok(SweepPoint {
                    chunk_size,
                    top_k: k.trim().parse()?,
                })
            })
            .collect();
    }
    Ok(DEFAULT_SWEEP_GRID.to_vec())
}

fn print_warnings(warnings: &[String]) {
    for warning in warnings {
        eprintln!("warning: {warning}");
    }
}

fn format_extension(format: ReportFormat) -> &'static str {
    match format {
        ReportFormat::Csv => "csv",
        ReportFormat::Markdown => "md",
        ReportFormat::Json => "json",
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let resolved = resolve_eval(&args.common)?;
    let mut warnings = Vec::new();
    let report =
        ragkit::harness::run_evaluation(&resolved.spec, resolved.gateway.clone(), &mut warnings)?;
    print_warnings(&warnings);
    match &args.out {
        Some(path) => {
            emit_report(&report, resolved.format, path)?;
            println!("report written to {}", path.display());
        }
        None => print!("{}", render(&report, resolved.format)),
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let resolved = resolve_eval(&args.common)?;
    let grid = parse_grid(args, resolved.spec.retriever.chunk_size)?;
    let mut warnings = Vec::new();
    let runs = run_sweep(&resolved.spec, &grid, resolved.gateway.clone(), &mut warnings)?;
    print_warnings(&warnings);
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))?;
    for run in &runs {
        let name = format!(
            "sweep-cs{}-k{}.{}",
            run.point.chunk_size,
            run.point.top_k,
            format_extension(resolved.format)
        );
        let path = args.out.join(name);
        match &run.result {
            Ok(report) => {
                emit_report(report, resolved.format, &path)?;
                println!(
                    "chunk_size={} top_k={} -> {}",
                    run.point.chunk_size,
                    run.point.top_k,
                    path.display()
                );
            }
            Err(e) => {
                eprintln!(
                    "grid point chunk_size={} top_k={} failed: {e}",
                    run.point.chunk_size, run.point.top_k
                );
            }
        }
    }
    Ok(())
}

fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let spec = PipelineSpec::from_file(&args.spec)?;
    let base_dir = args
        .spec
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let templates = match &args.templates {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::embedded(),
    };
    let gateway = build_gateway(&args.gateway, &EvalFileConfig::default())?;
    let mut warnings = Vec::new();
    let dataset =
        ragkit::pipeline::run_pipeline(&spec, &base_dir, &templates, &gateway, &mut warnings)?;
    print_warnings(&warnings);
    ragkit::corpus::save_dataset(&dataset, &args.out)?;
    println!(
        "wrote {} documents and {} records to {}",
        dataset.documents.len(),
        dataset.records.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let report = MetricReport::from_json_file(&args.input)?;
    let format: ReportFormat = args
        .format
        .parse()
        .map_err(|e: String| anyhow::anyhow!(e))?;
    match &args.out {
        Some(path) => {
            emit_report(&report, format, path)?;
            println!("report written to {}", path.display());
        }
        None => print!("{}", render(&report, format)),
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}
