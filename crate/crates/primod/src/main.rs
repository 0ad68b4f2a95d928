use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use primod::llm::ModelConfig;
use primod::pipeline::{run_analysis, run_index, EmbedderChoice, IndexConfig, RunConfig};
use primod::report::{
    clusters_report, layer_a, layer_b, render_summary_markdown, LayerAReport, LayerBReport,
    ResultsFile, Summary,
};
use primod::retrieval::DEFAULT_OFFLINE_DIMENSION;

/// Privacy threat identification for AI systems: retrieval-augmented
/// analysis of data-flow diagrams plus two-layer evaluation.
#[derive(Parser)]
#[command(name = "primod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the knowledge-fragment vector index from the two knowledge bases.
    Index(IndexArgs),
    /// Analyze every data flow of a DFD against an index via an LLM endpoint.
    Analyze(AnalyzeArgs),
    /// Compute evaluation reports from persisted analysis results.
    #[command(subcommand)]
    Evaluate(EvaluateCmd),
    /// Render human-oriented reports from analysis results.
    #[command(subcommand)]
    Report(ReportCmd),
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderKind {
    /// Deterministic local hashing embedder; no network needed.
    Offline,
    /// Remote embedding endpoint (PRIMOD_EMBED_ENDPOINT or --embed-endpoint).
    Remote,
}

#[derive(Args)]
struct EmbedderArgs {
    #[arg(long, value_enum, default_value = "offline")]
    embedder: EmbedderKind,
    /// Embedding endpoint URL for --embedder remote.
    #[arg(long, env = "PRIMOD_EMBED_ENDPOINT")]
    embed_endpoint: Option<String>,
    /// Model name sent to the remote embedding endpoint.
    #[arg(long, default_value = "nomic-embed-text")]
    embed_model: String,
}

impl EmbedderArgs {
    fn choice(&self) -> Result<EmbedderChoice> {
        Ok(match self.embedder {
            EmbedderKind::Offline => EmbedderChoice::Offline {
                dimension: DEFAULT_OFFLINE_DIMENSION,
            },
            EmbedderKind::Remote => {
                let endpoint = self
                    .embed_endpoint
                    .clone()
                    .context("--embedder remote requires --embed-endpoint or PRIMOD_EMBED_ENDPOINT")?;
                EmbedderChoice::Remote {
                    endpoint_url: endpoint,
                    model_name: self.embed_model.clone(),
                }
            }
        })
    }
}

#[derive(Args)]
struct IndexArgs {
    /// Hierarchical privacy taxonomy JSON file.
    #[arg(long)]
    linddun_kb: PathBuf,
    /// AI privacy attack catalog JSON file.
    #[arg(long)]
    ai_kb: PathBuf,
    #[command(flatten)]
    embedder: EmbedderArgs,
    /// Maximum characters per knowledge fragment.
    #[arg(long, default_value_t = primod::kb::DEFAULT_MAX_CHUNK_CHARS)]
    max_chunk_chars: usize,
    /// Output path for the index file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Data-flow diagram JSON file.
    #[arg(long)]
    dfd: PathBuf,
    /// Vector index produced by `primod index`.
    #[arg(long)]
    index: PathBuf,
    /// Prompt template file with {placeholder} slots.
    #[arg(long)]
    template: PathBuf,
    /// Model name sent to the completion endpoint.
    #[arg(long)]
    model: String,
    /// Chat-completion endpoint URL.
    #[arg(long, env = "PRIMOD_LLM_ENDPOINT")]
    endpoint: String,
    /// Number of knowledge fragments retrieved per data flow.
    #[arg(long, default_value_t = primod::retrieval::DEFAULT_TOP_K)]
    k: usize,
    #[arg(long, default_value_t = 0.7)]
    temperature: f64,
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    #[arg(long, default_value_t = 1024)]
    max_tokens: u32,
    /// Extra generate calls allowed to repair malformed JSON output.
    #[arg(long, default_value_t = 2)]
    max_repair_attempts: u32,
    /// Per-request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout_secs: u64,
    /// Parallel in-flight requests.
    #[arg(long, default_value_t = 2)]
    concurrency: usize,
    /// Optional character budget for assembled prompts.
    #[arg(long)]
    max_prompt_chars: Option<usize>,
    #[command(flatten)]
    embedder: EmbedderArgs,
    /// Output directory for per-flow sidecars, manifest, and results.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvaluateCmd {
    /// Score a model run against a reference run: recall, coverage, Jaccard.
    LayerA {
        /// Results file for the model under evaluation.
        #[arg(long)]
        candidate: PathBuf,
        /// Results file for the reference analysis.
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-model agreement: kappa, PABAK, and robustness on clustered names.
    LayerB {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Jaccard similarity threshold for linking threat names.
        #[arg(long, default_value_t = 0.20)]
        tau: f64,
        /// Label for the analyzed system in the report.
        #[arg(long, default_value = "system")]
        system: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Markdown,
}

#[derive(Subcommand)]
enum ReportCmd {
    /// Cluster the threat names from one or more runs and list the partition.
    Clusters {
        /// Results files to pool names from.
        #[arg(long, num_args = 1.., required = true)]
        results: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.20)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combine layer reports into a single summary document.
    Summary {
        /// Layer-A report files produced by `evaluate layer-a`.
        #[arg(long = "layer-a", num_args = 0..)]
        layer_a: Vec<PathBuf>,
        /// Layer-B report files produced by `evaluate layer-b`.
        #[arg(long = "layer-b", num_args = 0..)]
        layer_b: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "markdown")]
        format: OutputFormat,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_json<T: serde::Serialize>(path: &PathBuf, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Exit codes: 0 success; 1 invalid input or configuration; 2 analysis
/// completed with per-flow failures; 3 environment failure (I/O, endpoint).
fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let usage = err.is::<UsageError>();
            ExitCode::from(if usage { 1 } else { 3 })
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Index(args) => {
            let config = IndexConfig {
                linddun_kb_path: args.linddun_kb,
                ai_kb_path: args.ai_kb,
                embedder: args.embedder.choice()?,
                out_path: args.out.clone(),
                max_chunk_chars: args.max_chunk_chars,
            };
            let summary = run_index(&config)
                .map_err(|e| classify_pipeline_error(e))?;
            println!(
                "indexed {} fragments ({}) -> {}",
                summary.fragment_count,
                summary.fingerprint,
                args.out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze(args) => {
            let mut model = ModelConfig::new(args.endpoint, args.model);
            model.temperature = args.temperature;
            model.top_p = args.top_p;
            model.max_tokens = args.max_tokens;
            model.max_repair_attempts = args.max_repair_attempts;
            model.request_timeout = std::time::Duration::from_secs(args.timeout_secs);
            let config = RunConfig {
                dfd_path: args.dfd,
                index_path: args.index,
                template_path: args.template,
                output_dir: args.out,
                k: args.k,
                model,
                embedder: args.embedder.choice()?,
                concurrency: args.concurrency,
                max_prompt_chars: args.max_prompt_chars,
            };
            let outcome = run_analysis(&config).map_err(|e| classify_pipeline_error(e))?;
            if outcome.skipped > 0 {
                println!("resumed: {} flow(s) already analyzed", outcome.skipped);
            }
            println!(
                "analyzed {} flow(s) -> {}",
                outcome.done,
                outcome.results_path.display()
            );
            if !outcome.failed.is_empty() {
                for (df_id, reason) in &outcome.failed {
                    eprintln!("failed: {df_id}: {reason}");
                }
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate(cmd) => {
            match cmd {
                EvaluateCmd::LayerA {
                    candidate,
                    reference,
                    out,
                } => {
                    let candidate = ResultsFile::load(&candidate)?;
                    let reference = ResultsFile::load(&reference)?;
                    let report = layer_a(&candidate, &reference)?;
                    write_json(&out, &report)?;
                    println!(
                        "layer A: {} vs {}: recall {:.1}%, coverage {:.1}%, jaccard {:.3} -> {}",
                        report.candidate_model,
                        report.reference_model,
                        100.0 * report.pillar_recall,
                        100.0 * report.candidate_avg_coverage,
                        report.avg_jaccard,
                        out.display()
                    );
                }
                EvaluateCmd::LayerB { a, b, tau, system, out } => {
                    let a = ResultsFile::load(&a)?;
                    let b = ResultsFile::load(&b)?;
                    let report = layer_b(&a, &b, tau, &system)?;
                    write_json(&out, &report)?;
                    let g = &report.agreement;
                    println!(
                        "layer B: {} <-> {}: kappa {:.4}, P_o {:.4}, PABAK {:.4}, R {:.4} -> {}",
                        g.model_a, g.model_b, g.kappa, g.p_o, g.pabak, g.robustness,
                        out.display()
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Report(cmd) => {
            match cmd {
                ReportCmd::Clusters { results, tau, out } => {
                    let files: Vec<ResultsFile> = results
                        .iter()
                        .map(|p| ResultsFile::load(p).map_err(Into::into))
                        .collect::<Result<_>>()?;
                    let report = clusters_report(&files, tau);
                    write_json(&out, &report)?;
                    println!(
                        "{} cluster(s) at tau {:.2} -> {}",
                        report.clusters.len(),
                        tau,
                        out.display()
                    );
                }
                ReportCmd::Summary {
                    layer_a,
                    layer_b,
                    format,
                    out,
                } => {
                    if layer_a.is_empty() && layer_b.is_empty() {
                        bail!(UsageError(
                            "provide at least one --layer-a or --layer-b report".into()
                        ));
                    }
                    let summary = Summary {
                        layer_a: layer_a
                            .iter()
                            .map(read_json::<LayerAReport>)
                            .collect::<Result<_>>()?,
                        layer_b: layer_b
                            .iter()
                            .map(read_json::<LayerBReport>)
                            .collect::<Result<_>>()?,
                    };
                    let rendered = match format {
                        OutputFormat::Json => serde_json::to_string_pretty(&summary)?,
                        OutputFormat::Markdown => render_summary_markdown(&summary),
                    };
                    match out {
                        Some(path) => std::fs::write(&path, rendered)
                            .with_context(|| format!("writing {}", path.display()))?,
                        None => print!("{rendered}"),
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Map pipeline failures onto the documented exit-code classes: bad inputs
/// (malformed KBs, DFDs, templates, config) are usage errors; everything
/// else (I/O, endpoints, stale index) is an environment failure.
fn classify_pipeline_error(e: primod::pipeline::PipelineError) -> anyhow::Error {
    use primod::pipeline::PipelineError as P;
    match e {
        P::Kb(_) | P::Dfd(_) | P::Template(_) | P::Config(_) => {
            anyhow::Error::new(UsageError(e.to_string()))
        }
        other => anyhow::Error::new(other),
    }
}
