//! Pipeline orchestration behind the CLI subcommands: corpus ingestion,
//! explanation distillation, SFT export, matrix runs with deterministic
//! persistence and resume, and report generation.
//!
//! A run directory is owned by a single process (lock file), raw model text
//! is persisted before parsing, and every output byte is a function of the
//! canonical corpora, the matrix, the backend contents, and the seeds.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analyze::{
    bias_by_group, emit_report, fit_power_law, AnalyzeError, LearningCurvePoint, ReportBundle,
    ReportOptions,
};
use crate::client::{
    Backend, ClientError, CompletionRequest, FinishReason, HttpBackend, ModelEndpoint, ReplayStore,
    SyntheticMode,
};
use crate::corpus::{
    check_overlap, corpus_fingerprint, dedup, domain_distribution, load_corpus, save_corpus,
    Corpus, CorpusError, DomainTag, Label, QuestionRecord, SplitTag,
};
use crate::distill::{distill_explanation, DistillOptions, DistillResult, IracExplanation};
use crate::grade::{aggregate, GradeError, GradedAnswer, Metric, RunResult};
use crate::parse::{parse_response, ParseStatus};
use crate::promptgen::{
    render_inference_prompt, serialize_target, ChatTemplateSpec, ExplanationType, GenerationConfig,
    PromptError, PromptType, ResponseFormat, ResponseType,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    /// Bad inputs, schema violations, leaked overlap, lock conflicts. Exit 1.
    #[error("{0}")]
    Validation(String),
    /// Backend failures and aborted runs. Exit 2.
    #[error("{0}")]
    Transport(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Transport(_) => 2,
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> PipelineError {
        PipelineError::Validation(e.to_string())
    }
}

impl From<PromptError> for PipelineError {
    fn from(e: PromptError) -> PipelineError {
        PipelineError::Validation(e.to_string())
    }
}

impl From<GradeError> for PipelineError {
    fn from(e: GradeError) -> PipelineError {
        PipelineError::Validation(e.to_string())
    }
}

impl From<AnalyzeError> for PipelineError {
    fn from(e: AnalyzeError) -> PipelineError {
        PipelineError::Validation(e.to_string())
    }
}

impl From<ClientError> for PipelineError {
    fn from(e: ClientError) -> PipelineError {
        match e {
            ClientError::Transport { .. } | ClientError::ReplayMiss { .. } => {
                PipelineError::Transport(e.to_string())
            }
            other => PipelineError::Validation(other.to_string()),
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> PipelineError {
    PipelineError::Validation(format!("{}: {source}", path.display()))
}

// ---------------------------------------------------------------------------
// Backend configuration

/// Backend selection in config files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Http {
        base_url: String,
        model_name: String,
        #[serde(default)]
        auth_token_env: Option<String>,
        #[serde(default)]
        request_timeout_secs: Option<u64>,
        #[serde(default)]
        max_retries: Option<u32>,
        #[serde(default)]
        backoff_base_ms: Option<u64>,
        #[serde(default)]
        max_concurrent_requests: Option<usize>,
    },
    Replay {
        store: PathBuf,
        model_name: String,
    },
    Synthetic {
        mode: SyntheticMode,
    },
}

impl BackendConfig {
    pub fn build(&self) -> Result<Backend, PipelineError> {
        match self {
            BackendConfig::Http {
                base_url,
                model_name,
                auth_token_env,
                request_timeout_secs,
                max_retries,
                backoff_base_ms,
                max_concurrent_requests,
            } => {
                let endpoint = ModelEndpoint {
                    base_url: base_url.clone(),
                    model_name: model_name.clone(),
                    auth_token_env: auth_token_env.clone(),
                    request_timeout_secs: request_timeout_secs.unwrap_or(120),
                    max_retries: max_retries.unwrap_or(3),
                    backoff_base_ms: backoff_base_ms.unwrap_or(500),
                    max_concurrent_requests: max_concurrent_requests.unwrap_or(4),
                };
                Ok(Backend::Http(HttpBackend::new(endpoint)?))
            }
            BackendConfig::Replay { store, model_name } => {
                let store = ReplayStore::load(store)?;
                Ok(Backend::replay(model_name.clone(), store))
            }
            BackendConfig::Synthetic { mode } => Ok(Backend::Synthetic(*mode)),
        }
    }

    pub fn model_name(&self) -> &str {
        match self {
            BackendConfig::Http { model_name, .. } => model_name,
            BackendConfig::Replay { model_name, .. } => model_name,
            BackendConfig::Synthetic { .. } => "synthetic",
        }
    }
}

// ---------------------------------------------------------------------------
// Ingest

#[derive(Debug, Clone, Deserialize)]
pub struct IngestSpec {
    pub train: PathBuf,
    pub test: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug)]
pub struct IngestSummary {
    pub train_kept: usize,
    pub train_removed: usize,
    pub test_kept: usize,
    pub test_removed: usize,
    pub train_distribution: BTreeMap<DomainTag, usize>,
    pub test_distribution: BTreeMap<DomainTag, usize>,
    pub train_path: PathBuf,
    pub test_path: PathBuf,
}

impl IngestSummary {
    /// Per-domain distribution table with train/test columns and totals.
    pub fn distribution_table(&self) -> String {
        let mut out = String::from("Legal domain        Train   Test\n");
        let mut train_total = 0;
        let mut test_total = 0;
        for domain in DomainTag::ALL {
            let train = self.train_distribution.get(&domain).copied().unwrap_or(0);
            let test = self.test_distribution.get(&domain).copied().unwrap_or(0);
            train_total += train;
            test_total += test;
            out.push_str(&format!(
                "{:<20}{:>5}  {:>5}\n",
                domain.canonical_name(),
                train,
                test
            ));
        }
        out.push_str(&format!(
            "{:<20}{:>5}  {:>5}\n",
            "Total", train_total, test_total
        ));
        out
    }
}

/// Load, de-duplicate, and overlap-check the corpora, then write the
/// canonical files. Any train/test overlap is an error naming the colliding
/// ids.
pub fn cmd_ingest(spec: &IngestSpec) -> Result<IngestSummary, PipelineError> {
    let train_raw = load_corpus(&spec.train, SplitTag::Train)?;
    let test_raw = load_corpus(&spec.test, SplitTag::Test)?;
    let (train, train_removed) = dedup(&train_raw);
    let (test, test_removed) = dedup(&test_raw);
    let collisions = check_overlap(&train, &test);
    if !collisions.is_empty() {
        let listed: Vec<String> = collisions
            .iter()
            .map(|(a, b)| format!("train {a} == test {b}"))
            .collect();
        return Err(PipelineError::Validation(format!(
            "train/test overlap detected ({} collisions): {}",
            collisions.len(),
            listed.join("; ")
        )));
    }
    std::fs::create_dir_all(&spec.out_dir).map_err(|e| io_err(&spec.out_dir, e))?;
    let train_path = spec.out_dir.join("train.jsonl");
    let test_path = spec.out_dir.join("test.jsonl");
    save_corpus(&train, &train_path)?;
    save_corpus(&test, &test_path)?;
    Ok(IngestSummary {
        train_kept: train.len(),
        train_removed,
        test_kept: test.len(),
        test_removed,
        train_distribution: domain_distribution(&train),
        test_distribution: domain_distribution(&test),
        train_path,
        test_path,
    })
}

// ---------------------------------------------------------------------------
// Distill

#[derive(Debug, Clone, Deserialize)]
pub struct DistillSpec {
    pub corpus: PathBuf,
    pub out_corpus: PathBuf,
    pub failure_report: PathBuf,
    /// JSON file holding the worked example: raw explanation plus its
    /// structured form.
    pub exemplar: PathBuf,
    pub backend: BackendConfig,
    #[serde(default)]
    pub options: DistillOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillExemplarFile {
    pub raw_explanation: String,
    pub structured: IracExplanation,
}

#[derive(Debug)]
pub struct DistillSummary {
    pub distilled: usize,
    pub failed: usize,
    pub skipped_already_done: usize,
}

/// Drive distillation over a corpus with incremental persistence: output
/// records append as they complete, so partial progress survives an abort,
/// and reruns skip the finished prefix.
pub fn cmd_distill(spec: &DistillSpec) -> Result<DistillSummary, PipelineError> {
    let corpus = load_corpus(&spec.corpus, SplitTag::Train)?;
    let exemplar_text =
        std::fs::read_to_string(&spec.exemplar).map_err(|e| io_err(&spec.exemplar, e))?;
    let exemplar: DistillExemplarFile = serde_json::from_str(&exemplar_text)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", spec.exemplar.display())))?;
    let exemplar_pair = (exemplar.raw_explanation, exemplar.structured);
    let backend = spec.backend.build()?;

    // resume: skip records already present in the output file
    let skip = if spec.out_corpus.exists() {
        let existing =
            std::fs::read_to_string(&spec.out_corpus).map_err(|e| io_err(&spec.out_corpus, e))?;
        existing.lines().filter(|l| !l.trim().is_empty()).count()
    } else {
        0
    };
    if skip > corpus.len() {
        return Err(PipelineError::Validation(format!(
            "{} already holds {skip} records but the input corpus has {}",
            spec.out_corpus.display(),
            corpus.len()
        )));
    }

    let mut out_file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&spec.out_corpus)
        .map_err(|e| io_err(&spec.out_corpus, e))?;
    let mut failures = Vec::new();
    let mut distilled = 0usize;
    let mut abort: Option<ClientError> = None;

    let pending = &corpus.records[skip..];
    crate::pool::run_ordered_streaming(
        pending.len(),
        spec.options.workers,
        |i| distill_explanation(&backend, &pending[i], &exemplar_pair, &spec.options),
        |i, outcome| match outcome {
            Err(e) => {
                abort = Some(e);
                false
            }
            Ok(outcome) => {
                let mut record = pending[i].clone();
                match outcome.result {
                    DistillResult::Success(irac) => {
                        record.structured_explanation = Some(irac);
                        distilled += 1;
                    }
                    DistillResult::Failed { reason, attempts } => {
                        failures.push(crate::distill::DistillFailure {
                            id: outcome.record_id,
                            reason,
                            attempts,
                        });
                    }
                }
                let single = Corpus {
                    records: vec![record],
                    split_tag: corpus.split_tag,
                };
                let line = crate::corpus::serialize_corpus(&single);
                out_file.write_all(line.as_bytes()).is_ok()
            }
        },
    );
    out_file.flush().map_err(|e| io_err(&spec.out_corpus, e))?;

    let mut report = String::new();
    for failure in &failures {
        report
            .push_str(&serde_json::to_string(failure).expect("failure serialization cannot fail"));
        report.push('\n');
    }
    std::fs::write(&spec.failure_report, report).map_err(|e| io_err(&spec.failure_report, e))?;

    if let Some(e) = abort {
        return Err(PipelineError::Transport(format!(
            "distillation aborted after {} records: {e}",
            skip + distilled + failures.len()
        )));
    }
    Ok(DistillSummary {
        distilled,
        failed: failures.len(),
        skipped_already_done: skip,
    })
}

// ---------------------------------------------------------------------------
// SFT export

#[derive(Debug, Clone, Deserialize)]
pub struct CellSpec {
    pub prompt_type: PromptType,
    pub explanation_type: ExplanationType,
    pub response_type: ResponseType,
    pub response_format: ResponseFormat,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
}

fn default_max_tokens() -> u32 {
    512
}

impl CellSpec {
    pub fn to_config(&self) -> GenerationConfig {
        GenerationConfig {
            prompt_type: self.prompt_type,
            explanation_type: self.explanation_type,
            response_type: self.response_type,
            response_format: self.response_format,
            temperature: self.temperature,
            seed: self.seed,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExportSpec {
    pub corpus: PathBuf,
    pub out: PathBuf,
    /// Builtin template name (`llama2`, `llama3`, `plain`) or a TOML path.
    pub template: String,
    /// Per-domain sample count; capped at availability.
    pub sample_size: usize,
    #[serde(default)]
    pub seed: u64,
    /// Required for few-shot configs; exemplar records are excluded from the
    /// export.
    #[serde(default)]
    pub exemplars: Option<PathBuf>,
    pub config: CellSpec,
}

pub fn resolve_template(name_or_path: &str) -> Result<ChatTemplateSpec, PipelineError> {
    if let Some(builtin) = ChatTemplateSpec::builtin(name_or_path) {
        return Ok(builtin);
    }
    Ok(ChatTemplateSpec::load(name_or_path)?)
}

fn load_exemplar_map(path: &Path) -> Result<BTreeMap<DomainTag, QuestionRecord>, PipelineError> {
    let corpus = load_corpus(path, SplitTag::Train)?;
    let mut map = BTreeMap::new();
    for record in corpus.records {
        if map.insert(record.domain, record.clone()).is_some() {
            return Err(PipelineError::Validation(format!(
                "exemplar file {} has more than one record for domain {}",
                path.display(),
                record.domain
            )));
        }
    }
    Ok(map)
}

/// Sample per domain, drop designated exemplars, and export prompt/completion
/// pairs. Returns the number of lines written.
pub fn cmd_export_sft(spec: &ExportSpec) -> Result<usize, PipelineError> {
    let corpus = load_corpus(&spec.corpus, SplitTag::Train)?;
    let config = spec.config.to_config();
    let template = resolve_template(&spec.template)?;
    let exemplars = match &spec.exemplars {
        Some(path) => Some(load_exemplar_map(path)?),
        None => None,
    };
    if config.prompt_type == PromptType::FewShot && exemplars.is_none() {
        return Err(PipelineError::Validation(
            "few-shot export requires an exemplars file".to_string(),
        ));
    }
    // designated exemplars never appear in the training data
    let excluded: HashSet<&str> = exemplars
        .iter()
        .flat_map(|m| m.values().map(|r| r.id.as_str()))
        .collect();
    let filtered = Corpus {
        records: corpus
            .records
            .iter()
            .filter(|r| !excluded.contains(r.id.as_str()))
            .cloned()
            .collect(),
        split_tag: corpus.split_tag,
    };
    let sampled = crate::corpus::sample_per_domain(&filtered, spec.sample_size, spec.seed);
    let count = crate::promptgen::export_sft_dataset(
        &sampled,
        &config,
        &template,
        exemplars.as_ref(),
        &spec.out,
    )?;
    Ok(count)
}

// ---------------------------------------------------------------------------
// Matrix runs

/// Axis subsets for matrix expansion. Defaults cover the full grid with one
/// temperature, one seed, and the untrained baseline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixSpec {
    #[serde(default = "all_prompt_types")]
    pub prompt_types: Vec<PromptType>,
    #[serde(default = "all_explanation_types")]
    pub explanation_types: Vec<ExplanationType>,
    #[serde(default = "all_response_types")]
    pub response_types: Vec<ResponseType>,
    #[serde(default = "all_response_formats")]
    pub response_formats: Vec<ResponseFormat>,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_sample_sizes")]
    pub sample_sizes: Vec<usize>,
}

fn all_prompt_types() -> Vec<PromptType> {
    PromptType::ALL.to_vec()
}
fn all_explanation_types() -> Vec<ExplanationType> {
    ExplanationType::ALL.to_vec()
}
fn all_response_types() -> Vec<ResponseType> {
    ResponseType::ALL.to_vec()
}
fn all_response_formats() -> Vec<ResponseFormat> {
    ResponseFormat::ALL.to_vec()
}
fn default_temperatures() -> Vec<f64> {
    vec![0.0]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_sample_sizes() -> Vec<usize> {
    vec![0]
}

impl Default for MatrixSpec {
    fn default() -> MatrixSpec {
        MatrixSpec {
            prompt_types: all_prompt_types(),
            explanation_types: all_explanation_types(),
            response_types: all_response_types(),
            response_formats: all_response_formats(),
            temperatures: default_temperatures(),
            seeds: default_seeds(),
            sample_sizes: default_sample_sizes(),
        }
    }
}

impl MatrixSpec {
    /// Expansion size is the product of the axis cardinalities.
    pub fn expand(&self, max_tokens: u32) -> Vec<(GenerationConfig, usize)> {
        let mut out = Vec::new();
        for &sample_size in &self.sample_sizes {
            for &seed in &self.seeds {
                for &temperature in &self.temperatures {
                    for &prompt_type in &self.prompt_types {
                        for &explanation_type in &self.explanation_types {
                            for &response_type in &self.response_types {
                                for &response_format in &self.response_formats {
                                    out.push((
                                        GenerationConfig {
                                            prompt_type,
                                            explanation_type,
                                            response_type,
                                            response_format,
                                            temperature,
                                            seed,
                                            max_tokens,
                                        },
                                        sample_size,
                                    ));
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Pending,
    Partial,
    Complete,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Pending => f.write_str("pending"),
            RunStatus::Partial => f.write_str("partial"),
            RunStatus::Complete => f.write_str("complete"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub model_id: String,
    pub endpoint: String,
    pub config: GenerationConfig,
    pub train_sample_size: usize,
    pub corpus_fingerprint: String,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: RunStatus,
    pub questions_total: usize,
    pub questions_answered: usize,
}

/// One persisted per-question result line. Raw text and the exact prompt are
/// always kept so parsing can be rerun offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub question_id: String,
    pub gold_domain: String,
    pub gold_label: String,
    pub prompt_system: String,
    pub prompt_user: String,
    pub raw_text: String,
    pub finish_reason: String,
    pub parsed_domain: Option<String>,
    pub parsed_option: Option<String>,
    pub parsed_explanation: Option<String>,
    pub malformed_label: bool,
    pub malformed_explanation: bool,
    pub correct: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RunSpec {
    pub model_id: String,
    pub test_corpus: PathBuf,
    pub out_dir: PathBuf,
    pub template: String,
    #[serde(default)]
    pub exemplars: Option<PathBuf>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_run_workers")]
    pub workers: usize,
    #[serde(default = "default_failure_threshold")]
    pub failure_threshold: f64,
    /// Fixed manifest timestamp for reproducible reruns.
    #[serde(default)]
    pub fixed_time: Option<u64>,
    /// Stop after answering this many new questions per run (checkpointing).
    #[serde(default)]
    pub question_limit: Option<usize>,
    /// Append completed requests to a replay store file.
    #[serde(default)]
    pub record_replay: Option<PathBuf>,
    pub backend: BackendConfig,
    #[serde(default)]
    pub matrix: MatrixSpec,
}

fn default_run_workers() -> usize {
    4
}
fn default_failure_threshold() -> f64 {
    0.2
}

fn now_unix(fixed: Option<u64>) -> u64 {
    fixed.unwrap_or_else(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    })
}

fn sanitize(component: &str) -> String {
    component
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '-'
            }
        })
        .collect()
}

pub fn run_id(
    model_id: &str,
    config: &GenerationConfig,
    sample_size: usize,
    corpus_fp: &str,
) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    let config_json = serde_json::to_string(config).expect("config serialization cannot fail");
    for part in [model_id, config_json.as_str(), corpus_fp] {
        hasher.update((part.len() as u64).to_be_bytes());
        hasher.update(part.as_bytes());
    }
    hasher.update((sample_size as u64).to_be_bytes());
    crate::corpus::hex_digest(hasher)[..16].to_string()
}

fn run_dir_name(model_id: &str, config: &GenerationConfig, sample_size: usize, id: &str) -> String {
    format!(
        "{}-n{}-{}-t{}-s{}-{}",
        sanitize(model_id),
        sample_size,
        config.short_code(),
        sanitize(&crate::grade::format_float(config.temperature)),
        config.seed,
        &id[..8]
    )
}

struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<DirLock, PipelineError> {
        let path = dir.join(".lock");
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(PipelineError::Validation(format!(
                    "{} is locked by another process (remove {} if that process is gone)",
                    dir.display(),
                    path.display()
                )))
            }
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn read_rows(path: &Path) -> Result<Vec<ResultRow>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ResultRow = serde_json::from_str(line).map_err(|e| {
            PipelineError::Validation(format!("{}: line {}: {e}", path.display(), i + 1))
        })?;
        rows.push(row);
    }
    Ok(rows)
}

fn load_manifest(path: &Path) -> Result<Option<RunManifest>, PipelineError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let manifest = serde_json::from_str(&text)
        .map_err(|e| PipelineError::Validation(format!("{}: {e}", path.display())))?;
    Ok(Some(manifest))
}

fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), PipelineError> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serialization cannot fail");
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Upfront validation shared by all cells of a matrix run.
fn validate_run_inputs(
    spec: &RunSpec,
    corpus: &Corpus,
    exemplars: Option<&BTreeMap<DomainTag, QuestionRecord>>,
) -> Result<(), PipelineError> {
    let needs_few_shot = spec.matrix.prompt_types.contains(&PromptType::FewShot);
    let needs_structured = spec
        .matrix
        .explanation_types
        .contains(&ExplanationType::Structured);
    if needs_few_shot {
        let exemplars = exemplars.ok_or_else(|| {
            PipelineError::Validation(
                "matrix includes few-shot cells but no exemplars file was given".to_string(),
            )
        })?;
        for record in &corpus.records {
            if !exemplars.contains_key(&record.domain) {
                return Err(PipelineError::Validation(format!(
                    "no exemplar for domain {} (needed by record {})",
                    record.domain, record.id
                )));
            }
        }
        if needs_structured {
            for exemplar in exemplars.values() {
                if exemplar.structured_explanation.is_none() {
                    return Err(PipelineError::Validation(format!(
                        "exemplar {} lacks a structured explanation but the matrix includes structured cells",
                        exemplar.id
                    )));
                }
            }
        }
        // leak guard: exemplars must not duplicate test questions
        let exemplar_corpus = Corpus {
            records: exemplars.values().cloned().collect(),
            split_tag: SplitTag::Train,
        };
        let collisions = check_overlap(&exemplar_corpus, corpus);
        if !collisions.is_empty() {
            return Err(PipelineError::Validation(format!(
                "exemplar/test overlap: {:?}",
                collisions
            )));
        }
    }
    if needs_structured && matches!(spec.backend, BackendConfig::Synthetic { .. }) {
        for record in &corpus.records {
            if record.structured_explanation.is_none() {
                return Err(PipelineError::Validation(format!(
                    "record {} lacks a structured explanation but the synthetic backend must render structured gold targets",
                    record.id
                )));
            }
        }
    }
    Ok(())
}

/// Expand the matrix and run every cell against the configured backend, with
/// per-question isolation, ordered persistence, skip of complete runs, and
/// resume of partial ones.
pub fn cmd_matrix_run(spec: &RunSpec) -> Result<Vec<RunManifest>, PipelineError> {
    let backend = spec.backend.build()?;
    cmd_matrix_run_with_backend(spec, &backend)
}

/// As [`cmd_matrix_run`] with a caller-owned backend, which keeps replay
/// lookup counters observable.
pub fn cmd_matrix_run_with_backend(
    spec: &RunSpec,
    backend: &Backend,
) -> Result<Vec<RunManifest>, PipelineError> {
    let corpus = load_corpus(&spec.test_corpus, SplitTag::Test)?;
    if corpus.is_empty() {
        return Err(PipelineError::Validation(format!(
            "{}: test corpus is empty",
            spec.test_corpus.display()
        )));
    }
    let template = resolve_template(&spec.template)?;
    let exemplars = match &spec.exemplars {
        Some(path) => Some(load_exemplar_map(path)?),
        None => None,
    };
    validate_run_inputs(spec, &corpus, exemplars.as_ref())?;
    let corpus_fp = corpus_fingerprint(&corpus);
    std::fs::create_dir_all(&spec.out_dir).map_err(|e| io_err(&spec.out_dir, e))?;

    let mut manifests = Vec::new();
    for (config, sample_size) in spec.matrix.expand(spec.max_tokens) {
        let manifest = run_one_cell(
            spec,
            backend,
            &template,
            &corpus,
            exemplars.as_ref(),
            &corpus_fp,
            config,
            sample_size,
        )?;
        manifests.push(manifest);
    }
    Ok(manifests)
}

#[allow(clippy::too_many_arguments)]
fn run_one_cell(
    spec: &RunSpec,
    backend: &Backend,
    template: &ChatTemplateSpec,
    corpus: &Corpus,
    exemplars: Option<&BTreeMap<DomainTag, QuestionRecord>>,
    corpus_fp: &str,
    config: GenerationConfig,
    sample_size: usize,
) -> Result<RunManifest, PipelineError> {
    let id = run_id(&spec.model_id, &config, sample_size, corpus_fp);
    let dir = spec
        .out_dir
        .join(run_dir_name(&spec.model_id, &config, sample_size, &id));
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let manifest_path = dir.join("manifest.json");
    let results_path = dir.join("results.jsonl");

    let existing = load_manifest(&manifest_path)?;
    if let Some(manifest) = &existing {
        if manifest.status == RunStatus::Complete {
            return Ok(manifest.clone());
        }
        if manifest.corpus_fingerprint != *corpus_fp {
            return Err(PipelineError::Validation(format!(
                "{}: corpus fingerprint changed since the run started",
                dir.display()
            )));
        }
    }
    let _lock = DirLock::acquire(&dir)?;

    let prior_rows = read_rows(&results_path)?;
    let answered: HashSet<&str> = prior_rows.iter().map(|r| r.question_id.as_str()).collect();
    let mut pending: Vec<&QuestionRecord> = corpus
        .records
        .iter()
        .filter(|r| !answered.contains(r.id.as_str()))
        .collect();
    if let Some(limit) = spec.question_limit {
        pending.truncate(limit);
    }

    let started_unix = existing
        .as_ref()
        .map(|m| m.started_unix)
        .unwrap_or_else(|| now_unix(spec.fixed_time));

    let max_failures = (spec.failure_threshold * corpus.len() as f64).floor() as usize;
    let mut failures = 0usize;
    let mut aborted = false;
    let mut new_rows = 0usize;
    let mut recorded: Vec<(CompletionRequest, crate::client::CompletionResult)> = Vec::new();

    {
        let mut out_file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&results_path)
            .map_err(|e| io_err(&results_path, e))?;

        type JobOutput = Result<
            (
                ResultRow,
                Option<(CompletionRequest, crate::client::CompletionResult)>,
            ),
            PipelineError,
        >;
        let job = |i: usize| -> JobOutput {
            let record = pending[i];
            let exemplar = match config.prompt_type {
                PromptType::ZeroShot => None,
                PromptType::FewShot => exemplars.and_then(|m| m.get(&record.domain)),
            };
            let prompt = render_inference_prompt(&config, template, record, exemplar)?;
            let request = CompletionRequest {
                system_text: prompt.system_text.clone(),
                user_text: prompt.user_text.clone(),
                temperature: config.temperature,
                seed: config.seed,
                max_tokens: config.max_tokens,
                stop_sequences: vec![template.end_of_turn.clone()],
            };
            let gold = match backend {
                Backend::Synthetic(_) => Some(serialize_target(&config, record)?),
                _ => None,
            };
            match backend.complete(&request, gold.as_deref()) {
                Ok(result) => {
                    let parsed = parse_response(&result.text, &config, Some(&prompt.system_text));
                    let row = ResultRow {
                        question_id: record.id.clone(),
                        gold_domain: record.domain.canonical_name().to_string(),
                        gold_label: record.correct_label.as_str().to_string(),
                        prompt_system: prompt.system_text.clone(),
                        prompt_user: prompt.user_text.clone(),
                        raw_text: result.text.clone(),
                        finish_reason: result.finish_reason.as_str().to_string(),
                        parsed_domain: parsed.domain.map(|d| d.canonical_name().to_string()),
                        parsed_option: parsed.option.map(|l| l.as_str().to_string()),
                        parsed_explanation: parsed.explanation,
                        malformed_label: parsed.status.malformed_label,
                        malformed_explanation: parsed.status.malformed_explanation,
                        correct: parsed.option == Some(record.correct_label),
                        error: None,
                    };
                    Ok((row, Some((request, result))))
                }
                Err(e) => {
                    let row = ResultRow {
                        question_id: record.id.clone(),
                        gold_domain: record.domain.canonical_name().to_string(),
                        gold_label: record.correct_label.as_str().to_string(),
                        prompt_system: prompt.system_text.clone(),
                        prompt_user: prompt.user_text.clone(),
                        raw_text: String::new(),
                        finish_reason: FinishReason::Error.as_str().to_string(),
                        parsed_domain: None,
                        parsed_option: None,
                        parsed_explanation: None,
                        malformed_label: true,
                        malformed_explanation: true,
                        correct: false,
                        error: Some(e.to_string()),
                    };
                    Ok((row, None))
                }
            }
        };

        let mut hard_error: Option<PipelineError> = None;
        crate::pool::run_ordered_streaming(pending.len(), spec.workers, job, |_, output| {
            match output {
                Err(e) => {
                    hard_error = Some(e);
                    false
                }
                Ok((row, record_entry)) => {
                    if row.error.is_some() {
                        failures += 1;
                    }
                    let line = serde_json::to_string(&row).expect("row serialization cannot fail");
                    if out_file.write_all(format!("{line}\n").as_bytes()).is_err() {
                        hard_error = Some(PipelineError::Validation(format!(
                            "{}: write failed",
                            results_path.display()
                        )));
                        return false;
                    }
                    new_rows += 1;
                    if let Some(entry) = record_entry {
                        recorded.push(entry);
                    }
                    if failures > max_failures {
                        aborted = true;
                        return false;
                    }
                    true
                }
            }
        });
        out_file.flush().map_err(|e| io_err(&results_path, e))?;
        if let Some(e) = hard_error {
            return Err(e);
        }
    }

    if let Some(store_path) = &spec.record_replay {
        if !recorded.is_empty() {
            let mut store = if store_path.exists() {
                ReplayStore::load(store_path)?
            } else {
                ReplayStore::new()
            };
            let model_name = spec.backend.model_name();
            for (request, result) in &recorded {
                store.record(request, model_name, result);
            }
            store.save(store_path)?;
        }
    }

    let answered_total = prior_rows.len() + new_rows;
    let status = if answered_total == corpus.len() && !aborted {
        RunStatus::Complete
    } else if answered_total == 0 {
        RunStatus::Pending
    } else {
        RunStatus::Partial
    };
    let manifest = RunManifest {
        run_id: id,
        model_id: spec.model_id.clone(),
        endpoint: backend.describe(),
        config,
        train_sample_size: sample_size,
        corpus_fingerprint: corpus_fp.to_string(),
        started_unix,
        finished_unix: (status == RunStatus::Complete).then(|| now_unix(spec.fixed_time)),
        status,
        questions_total: corpus.len(),
        questions_answered: answered_total,
    };
    write_manifest(&manifest_path, &manifest)?;

    if aborted {
        return Err(PipelineError::Transport(format!(
            "run {} aborted: {failures} backend failures exceeded the {:.0}% threshold; partial manifest written",
            manifest.run_id,
            spec.failure_threshold * 100.0
        )));
    }
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// Report

#[derive(Debug, Clone, Deserialize)]
pub struct ReportSpec {
    pub runs_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default = "default_true")]
    pub plots: bool,
}

fn default_true() -> bool {
    true
}

fn rows_to_run(manifest: &RunManifest, rows: &[ResultRow]) -> RunResult {
    let graded: Vec<GradedAnswer> = rows
        .iter()
        .map(|row| GradedAnswer {
            question_id: row.question_id.clone(),
            correct: row.correct,
            status: ParseStatus {
                malformed_label: row.malformed_label,
                malformed_explanation: row.malformed_explanation,
            },
            predicted: row.parsed_option.as_deref().and_then(Label::parse),
            gold: Label::parse(&row.gold_label).expect("gold labels are validated at ingest"),
        })
        .collect();
    let correct = graded.iter().filter(|g| g.correct).count();
    let malformed_label_count = graded.iter().filter(|g| g.status.malformed_label).count();
    let malformed_explanation_count = graded
        .iter()
        .filter(|g| g.status.malformed_explanation)
        .count();
    let accuracy = if graded.is_empty() {
        0.0
    } else {
        correct as f64 / graded.len() as f64
    };
    RunResult {
        model_id: manifest.model_id.clone(),
        config: manifest.config.clone(),
        train_sample_size: manifest.train_sample_size,
        graded,
        accuracy,
        malformed_label_count,
        malformed_explanation_count,
    }
}

/// Complete runs loaded from a runs directory, with their raw rows and the
/// count of skipped partial/pending runs.
pub struct LoadedRuns {
    pub runs: Vec<RunResult>,
    pub rows: Vec<Vec<ResultRow>>,
    pub skipped_partial: usize,
}

/// Load all complete runs under a directory.
pub fn load_runs(runs_dir: &Path) -> Result<LoadedRuns, PipelineError> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(runs_dir)
        .map_err(|e| io_err(runs_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    let mut runs = Vec::new();
    let mut all_rows = Vec::new();
    let mut skipped_partial = 0usize;
    for dir in dirs {
        let manifest =
            load_manifest(&dir.join("manifest.json"))?.expect("manifest existence checked above");
        if manifest.status != RunStatus::Complete {
            skipped_partial += 1;
            continue;
        }
        let rows = read_rows(&dir.join("results.jsonl"))?;
        if rows.len() != manifest.questions_total {
            return Err(PipelineError::Validation(format!(
                "{}: manifest says complete but {} of {} results are present",
                dir.display(),
                rows.len(),
                manifest.questions_total
            )));
        }
        runs.push(rows_to_run(&manifest, &rows));
        all_rows.push(rows);
    }
    Ok(LoadedRuns {
        runs,
        rows: all_rows,
        skipped_partial,
    })
}

/// Aggregate all complete runs into the full report artifact set.
pub fn cmd_report(spec: &ReportSpec) -> Result<Vec<PathBuf>, PipelineError> {
    let LoadedRuns {
        runs,
        rows,
        skipped_partial,
    } = load_runs(&spec.runs_dir)?;
    if runs.is_empty() {
        return Err(PipelineError::Validation(format!(
            "{}: no complete runs found ({} partial/pending skipped)",
            spec.runs_dir.display(),
            skipped_partial
        )));
    }

    let accuracy_by_sample_size = aggregate(&runs, &["model", "sample_size"], Metric::Accuracy)?;
    let malformed_by_sample_size = aggregate(
        &runs,
        &["model", "sample_size"],
        Metric::MalformedLabelCount,
    )?;

    // per-domain mean accuracy over runs in each (model, sample size) group;
    // the gold domain travels with each result row
    let mut domain_acc: BTreeMap<(String, usize, DomainTag), Vec<f64>> = BTreeMap::new();
    for (run, run_rows) in runs.iter().zip(rows.iter()) {
        let mut per_domain: BTreeMap<DomainTag, (usize, usize)> = BTreeMap::new();
        for row in run_rows {
            let Some(domain) = DomainTag::parse(&row.gold_domain) else {
                continue;
            };
            let slot = per_domain.entry(domain).or_default();
            slot.1 += 1;
            if row.correct {
                slot.0 += 1;
            }
        }
        for (domain, (correct, total)) in per_domain {
            domain_acc
                .entry((run.model_id.clone(), run.train_sample_size, domain))
                .or_default()
                .push(correct as f64 / total as f64);
        }
    }
    let per_domain: Vec<(String, usize, DomainTag, f64)> = domain_acc
        .into_iter()
        .map(|((model, sample_size, domain), values)| {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            (model, sample_size, domain, mean)
        })
        .collect();

    // option bias pooled per (model, sample size)
    let mut pools: BTreeMap<(String, usize), Vec<GradedAnswer>> = BTreeMap::new();
    for run in &runs {
        pools
            .entry((run.model_id.clone(), run.train_sample_size))
            .or_default()
            .extend(run.graded.iter().cloned());
    }
    let bias_map = bias_by_group(pools.iter().map(|(k, v)| (k.clone(), v.as_slice())));
    let biases: Vec<(String, usize, crate::analyze::OptionBias, f64, f64)> = bias_map
        .into_iter()
        .map(|((model, sample_size), (bias, rms, conventional))| {
            (model, sample_size, bias, rms, conventional)
        })
        .collect();

    // learning curves per model over trained sample sizes
    let mut curve_points: BTreeMap<String, BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    for run in &runs {
        curve_points
            .entry(run.model_id.clone())
            .or_default()
            .entry(run.train_sample_size)
            .or_default()
            .push(run.accuracy);
    }
    let mut curves = Vec::new();
    for (model, by_size) in curve_points {
        let points: Vec<LearningCurvePoint> = by_size
            .iter()
            .filter(|(size, _)| **size > 0)
            .map(|(size, accs)| LearningCurvePoint {
                sample_size: *size,
                accuracy: accs.iter().sum::<f64>() / accs.len() as f64,
            })
            .collect();
        let fit = if points.len() >= 2 && points.iter().all(|p| p.accuracy > 0.0) {
            fit_power_law(&points).ok()
        } else {
            None
        };
        curves.push((model, points, fit));
    }

    let bundle = ReportBundle {
        accuracy_by_sample_size,
        malformed_by_sample_size,
        per_domain,
        biases,
        curves,
    };
    let files = emit_report(&bundle, &spec.out_dir, &ReportOptions { plots: spec.plots })?;
    Ok(files)
}
