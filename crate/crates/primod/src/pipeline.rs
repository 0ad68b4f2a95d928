//! End-to-end orchestration: build the knowledge index, then analyze every
//! data flow of a DFD against it, with resumable per-flow persistence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dfd::{parse_dfd, DataFlow, DfdError};
use crate::kb::{chunk_kb, load_ai_privacy_kb, load_linddun_kb, KbError, DEFAULT_MAX_CHUNK_CHARS};
use crate::llm::{analyze_flow, AnalysisResult, LlmError, ModelConfig};
use crate::prompt::{assemble_with_budget, instantiate, load_template, TemplateError};
use crate::report::{ResultsFile, RESULTS_SCHEMA};
use crate::retrieval::{
    build_index, top_k, Embedder, IndexError, OfflineHashEmbedder, RemoteEmbedder, VectorIndex,
    DEFAULT_OFFLINE_DIMENSION,
};

pub const MANIFEST_SCHEMA: &str = "primod-manifest/1";

/// Scalar type used for index vectors by the pipeline and CLI.
pub type Scalar = f64;

/// Which embedding provider to use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum EmbedderChoice {
    Offline { dimension: usize },
    Remote { endpoint_url: String, model_name: String },
}

impl Default for EmbedderChoice {
    fn default() -> Self {
        EmbedderChoice::Offline {
            dimension: DEFAULT_OFFLINE_DIMENSION,
        }
    }
}

impl EmbedderChoice {
    pub fn build(&self) -> Box<dyn Embedder<Scalar> + Send + Sync> {
        match self {
            EmbedderChoice::Offline { dimension } => Box::new(OfflineHashEmbedder {
                dimension: *dimension,
            }),
            EmbedderChoice::Remote {
                endpoint_url,
                model_name,
            } => Box::new(RemoteEmbedder::new(endpoint_url.clone(), model_name.clone())),
        }
    }
}

/// Configuration for the `index` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexConfig {
    pub linddun_kb_path: PathBuf,
    pub ai_kb_path: PathBuf,
    pub embedder: EmbedderChoice,
    pub out_path: PathBuf,
    pub max_chunk_chars: usize,
}

/// Configuration for the `analyze` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dfd_path: PathBuf,
    pub index_path: PathBuf,
    pub template_path: PathBuf,
    pub output_dir: PathBuf,
    pub k: usize,
    pub model: ModelConfig,
    pub embedder: EmbedderChoice,
    pub concurrency: usize,
    /// Optional character budget for assembled prompts.
    pub max_prompt_chars: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DfStatus {
    Pending,
    Done,
    Failed,
}

/// Run manifest: config snapshot, fingerprints, and per-flow status.
/// Status transitions are monotone (pending to done or pending to failed).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub run_id: String,
    pub started_at: u64,
    pub model_name: String,
    pub embedder_fingerprint: String,
    pub index_file_sha256: String,
    pub flows: BTreeMap<String, DfStatus>,
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Dfd(#[from] DfdError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("io error at {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("stale index: manifest was created for a different index file (expected sha256 {expected}, found {actual})")]
    StaleIndex { expected: String, actual: String },
    #[error("configuration error: {0}")]
    Config(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

pub struct IndexSummary {
    pub fragment_count: usize,
    pub fingerprint: String,
}

/// Build and persist the knowledge index: load both KBs, chunk, embed.
pub fn run_index(config: &IndexConfig) -> Result<IndexSummary, PipelineError> {
    let linddun = load_linddun_kb(&config.linddun_kb_path)?;
    let ai = load_ai_privacy_kb(&config.ai_kb_path)?;
    let fragments = chunk_kb(&linddun, &ai, config.max_chunk_chars);
    let embedder = config.embedder.build();
    let index = build_index(&fragments, embedder.as_ref())?;
    index.save(&config.out_path)?;
    Ok(IndexSummary {
        fragment_count: index.entries.len(),
        fingerprint: index.embedder_fingerprint,
    })
}

impl Default for IndexConfig {
    fn default() -> Self {
        IndexConfig {
            linddun_kb_path: PathBuf::from("linddun_kb.json"),
            ai_kb_path: PathBuf::from("ai_privacy_kb.json"),
            embedder: EmbedderChoice::default(),
            out_path: PathBuf::from("index.json"),
            max_chunk_chars: DEFAULT_MAX_CHUNK_CHARS,
        }
    }
}

pub struct RunOutcome {
    pub results_path: PathBuf,
    pub done: usize,
    pub failed: Vec<(String, String)>,
    pub skipped: usize,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn sidecar_path(output_dir: &Path, df_id: &str) -> PathBuf {
    output_dir.join(format!("df_{df_id}.json"))
}

/// Write-temp-then-rename so a crashed run never leaves a torn sidecar.
fn write_atomic(path: &Path, contents: &str) -> Result<(), PipelineError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

/// Analyze every data flow of the DFD, resuming past flows whose sidecar
/// result already exists. Per-flow failures are recorded, not fatal; the
/// outcome lists them so the CLI can exit nonzero after attempting all.
pub fn run_analysis(config: &RunConfig) -> Result<RunOutcome, PipelineError> {
    if config.k < 1 {
        return Err(PipelineError::Config("k must be >= 1".into()));
    }
    config.model.validate()?;
    let index: VectorIndex<Scalar> = VectorIndex::load(&config.index_path)?;
    let embedder = config.embedder.build();
    index.check_fingerprint(embedder.as_ref())?;
    let index_bytes = std::fs::read(&config.index_path).map_err(|e| io_err(&config.index_path, e))?;
    let index_sha = sha256_hex(&index_bytes);

    let model = parse_dfd(&config.dfd_path)?;
    let template = load_template(&config.template_path)?;
    std::fs::create_dir_all(&config.output_dir).map_err(|e| io_err(&config.output_dir, e))?;

    let manifest_path = config.output_dir.join("manifest.json");
    let mut manifest = if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        let existing: RunManifest =
            serde_json::from_str(&text).map_err(|e| io_err(&manifest_path, e))?;
        // Resuming against a rebuilt or swapped index is an error, not a
        // warning: completed sidecars would mix retrieval contexts.
        if existing.index_file_sha256 != index_sha {
            return Err(PipelineError::StaleIndex {
                expected: existing.index_file_sha256,
                actual: index_sha,
            });
        }
        existing
    } else {
        RunManifest {
            schema: MANIFEST_SCHEMA.to_string(),
            run_id: format!("run-{}-{}", unix_now(), std::process::id()),
            started_at: unix_now(),
            model_name: config.model.model_name.clone(),
            embedder_fingerprint: index.embedder_fingerprint.clone(),
            index_file_sha256: index_sha,
            flows: model
                .data_flows
                .iter()
                .map(|f| (f.id.clone(), DfStatus::Pending))
                .collect(),
        }
    };

    // A flow is complete iff its sidecar exists; the manifest mirrors that.
    let pending: Vec<&DataFlow> = model
        .data_flows
        .iter()
        .filter(|f| !sidecar_path(&config.output_dir, &f.id).exists())
        .collect();
    let skipped = model.data_flows.len() - pending.len();
    for flow in &model.data_flows {
        if sidecar_path(&config.output_dir, &flow.id).exists() {
            manifest.flows.insert(flow.id.clone(), DfStatus::Done);
        }
    }

    let run_id = manifest.run_id.clone();
    let mut failed: Vec<(String, String)> = Vec::new();
    {
        let (tx, rx) = mpsc::channel::<(String, Result<(), String>)>();
        let queue: Mutex<std::vec::IntoIter<&DataFlow>> = Mutex::new(pending.clone().into_iter());
        let worker_count = config.concurrency.max(1).min(pending.len().max(1));
        let n_pending = pending.len();
        std::thread::scope(|scope| {
            for _ in 0..worker_count {
                let tx = tx.clone();
                let queue = &queue;
                let index = &index;
                let template = &template;
                let embedder = embedder.as_ref();
                let run_id = run_id.as_str();
                scope.spawn(move || loop {
                    let Some(flow) = queue.lock().unwrap().next() else {
                        break;
                    };
                    let outcome = analyze_one(
                        flow, index, embedder, template, config, run_id,
                    );
                    let _ = tx.send((flow.id.clone(), outcome.map_err(|e| e.to_string())));
                });
            }
            drop(tx);
            // Single-writer manifest discipline: only this loop mutates it.
            for _ in 0..n_pending {
                let Ok((df_id, result)) = rx.recv() else { break };
                let status = match result {
                    Ok(()) => DfStatus::Done,
                    Err(reason) => {
                        failed.push((df_id.clone(), reason));
                        DfStatus::Failed
                    }
                };
                manifest.flows.insert(df_id, status);
                let _ = write_atomic(
                    &manifest_path,
                    &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
                );
            }
        });
    }
    failed.sort();

    // Collect results in DFD declaration order regardless of completion order.
    let mut results: Vec<AnalysisResult> = Vec::new();
    for flow in &model.data_flows {
        let path = sidecar_path(&config.output_dir, &flow.id);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            let result: AnalysisResult =
                serde_json::from_str(&text).map_err(|e| io_err(&path, e))?;
            results.push(result);
        }
    }
    let results_file = ResultsFile {
        schema: RESULTS_SCHEMA.to_string(),
        run_id: run_id.clone(),
        model_name: config.model.model_name.clone(),
        created_at: unix_now().to_string(),
        index_fingerprint: index.embedder_fingerprint.clone(),
        results,
    };
    let results_path = config.output_dir.join("results.json");
    write_atomic(
        &results_path,
        &serde_json::to_string_pretty(&results_file).expect("results serialize"),
    )?;
    write_atomic(
        &manifest_path,
        &serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )?;
    Ok(RunOutcome {
        results_path,
        done: results_file.results.len(),
        failed,
        skipped,
    })
}

fn analyze_one(
    flow: &DataFlow,
    index: &VectorIndex<Scalar>,
    embedder: &dyn Embedder<Scalar>,
    template: &crate::prompt::PromptTemplate,
    config: &RunConfig,
    run_id: &str,
) -> Result<(), PipelineError> {
    // The retrieval query is the flow's textual description alone.
    let query = embedder.embed(&flow.description).map_err(IndexError::from)?;
    let hits = top_k(index, &query, config.k)?;
    let instantiated = instantiate(template, flow);
    let (prompt, dropped) = assemble_with_budget(&instantiated, &hits, config.max_prompt_chars);
    if dropped > 0 {
        eprintln!(
            "warning: {}: dropped {dropped} context fragment(s) to fit the prompt budget",
            flow.id
        );
    }
    let result = analyze_flow(&prompt, &config.model, run_id)?;
    let json = serde_json::to_string_pretty(&result).expect("result serializes");
    write_atomic(&sidecar_path(&config.output_dir, &flow.id), &json)
}
