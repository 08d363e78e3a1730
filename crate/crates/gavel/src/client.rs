//! Completion backends: a chat-completions HTTP client with retry/backoff, a
//! deterministic replay store, and a synthetic generator reproducing the
//! documented hallucination modes.
//!
//! Every request is self-contained; no backend carries conversation state
//! between calls, so question isolation holds by construction.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::hex_digest;

/// A chat-completions endpoint description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEndpoint {
    pub base_url: String,
    pub model_name: String,
    /// Name of the environment variable holding the bearer token; unset for
    /// unauthenticated local endpoints.
    #[serde(default)]
    pub auth_token_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub request_timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    /// Concurrent-request cap shared by all workers.
    #[serde(default = "default_concurrency")]
    pub max_concurrent_requests: usize,
}

fn default_timeout_secs() -> u64 {
    120
}
fn default_max_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_concurrency() -> usize {
    4
}

impl ModelEndpoint {
    pub fn validate(&self) -> Result<(), ClientError> {
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(ClientError::Protocol {
                detail: format!("base_url {:?} is not absolute", self.base_url),
            });
        }
        Ok(())
    }
}

/// One self-contained completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub system_text: String,
    pub user_text: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

impl FinishReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FinishReason::Stop => "stop",
            FinishReason::Length => "length",
            FinishReason::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionResult {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency: Duration,
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("transport failure after {attempts} attempts: {detail}")]
    Transport { attempts: u32, detail: String },
    #[error("protocol error: {detail}")]
    Protocol { detail: String },
    #[error("auth error: {detail}")]
    Auth { detail: String },
    #[error("replay miss for fingerprint {fingerprint}")]
    ReplayMiss { fingerprint: String },
    #[error("synthetic mode {mode} requires a gold target")]
    MissingGold { mode: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Stable request fingerprint over (model, prompt texts, sampling fields).
/// Floats are hashed bit-exactly.
pub fn request_fingerprint(request: &CompletionRequest, model_name: &str) -> String {
    let mut hasher = Sha256::new();
    for field in [model_name, &request.system_text, &request.user_text] {
        hasher.update((field.len() as u64).to_be_bytes());
        hasher.update(field.as_bytes());
    }
    hasher.update(request.temperature.to_bits().to_be_bytes());
    hasher.update(request.seed.to_be_bytes());
    hasher.update(u64::from(request.max_tokens).to_be_bytes());
    hex_digest(hasher)
}

// ---------------------------------------------------------------------------
// Replay store

#[derive(Debug, Serialize, Deserialize)]
struct ReplayEntry {
    fingerprint: String,
    text: String,
    finish_reason: FinishReason,
}

/// Exact-fingerprint cache of completions. A miss is an error, never a
/// silent live call.
#[derive(Debug, Default, Clone)]
pub struct ReplayStore {
    entries: HashMap<String, (String, FinishReason)>,
}

impl ReplayStore {
    pub fn new() -> ReplayStore {
        ReplayStore::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, fingerprint: String, text: String, finish_reason: FinishReason) {
        self.entries.insert(fingerprint, (text, finish_reason));
    }

    /// Record a completed request so it can be replayed later.
    pub fn record(
        &mut self,
        request: &CompletionRequest,
        model_name: &str,
        result: &CompletionResult,
    ) {
        self.insert(
            request_fingerprint(request, model_name),
            result.text.clone(),
            result.finish_reason,
        );
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ReplayStore, ClientError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ClientError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut store = ReplayStore::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry =
                serde_json::from_str(line).map_err(|e| ClientError::Protocol {
                    detail: format!("{}: line {}: {e}", path.display(), i + 1),
                })?;
            store.insert(entry.fingerprint, entry.text, entry.finish_reason);
        }
        Ok(store)
    }

    /// Line-delimited serialization, sorted by fingerprint for stable bytes.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ClientError> {
        let path = path.as_ref();
        let mut fingerprints: Vec<&String> = self.entries.keys().collect();
        fingerprints.sort();
        let mut out = String::new();
        for fingerprint in fingerprints {
            let (text, finish_reason) = &self.entries[fingerprint];
            let entry = ReplayEntry {
                fingerprint: fingerprint.clone(),
                text: text.clone(),
                finish_reason: *finish_reason,
            };
            out.push_str(&serde_json::to_string(&entry).expect("entry serialization cannot fail"));
            out.push('\n');
        }
        std::fs::write(path, out).map_err(|source| ClientError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Return the stored completion for this exact request, or a replay miss.
pub fn replay_complete(
    store: &ReplayStore,
    request: &CompletionRequest,
    model_name: &str,
) -> Result<CompletionResult, ClientError> {
    let fingerprint = request_fingerprint(request, model_name);
    match store.entries.get(&fingerprint) {
        Some((text, finish_reason)) => Ok(CompletionResult {
            text: text.clone(),
            finish_reason: *finish_reason,
            latency: Duration::ZERO,
        }),
        None => Err(ClientError::ReplayMiss { fingerprint }),
    }
}

// ---------------------------------------------------------------------------
// Synthetic backend

/// The documented failure modes, plus a faithful mode that echoes the gold
/// target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticMode {
    Faithful,
    LoopRepetition,
    FictitiousQuestion,
    PromptEcho,
    Truncated,
}

impl SyntheticMode {
    pub const ALL: [SyntheticMode; 5] = [
        SyntheticMode::Faithful,
        SyntheticMode::LoopRepetition,
        SyntheticMode::FictitiousQuestion,
        SyntheticMode::PromptEcho,
        SyntheticMode::Truncated,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SyntheticMode::Faithful => "faithful",
            SyntheticMode::LoopRepetition => "loop_repetition",
            SyntheticMode::FictitiousQuestion => "fictitious_question",
            SyntheticMode::PromptEcho => "prompt_echo",
            SyntheticMode::Truncated => "truncated",
        }
    }
}

/// Markers of the option field in each response format, used to locate where
/// the label would have been generated.
const OPTION_FIELD_MARKERS: [&str; 3] = [
    "\"chosen_option_label\"",
    "## Chosen Option",
    "Chosen Option Label:",
];
const EXPLANATION_FIELD_MARKERS: [&str; 4] = [
    "\"explanation\"",
    "## Explanation",
    "Explanation:",
    "Legal Concept:",
];

/// Tokens are approximated as four characters; the harness is
/// tokenizer-agnostic.
fn char_budget(max_tokens: u32) -> usize {
    max_tokens as usize * 4
}

fn find_first(text: &str, markers: &[&str]) -> Option<usize> {
    markers.iter().filter_map(|m| text.find(m)).min()
}

/// Clean a cut point: drop trailing whitespace, a dangling line-start item
/// number left behind by the cut, and dangling string/field punctuation.
fn trim_loop_base(base: &str) -> &str {
    let mut base = base.trim_end();
    let bytes = base.as_bytes();
    if let Some(&last) = bytes.last() {
        if last == b'.' || last == b')' {
            let mut j = base.len() - 1;
            while j > 0 && bytes[j - 1].is_ascii_digit() {
                j -= 1;
            }
            if j < base.len() - 1 && (j == 0 || bytes[j - 1] == b'\n') {
                base = base[..j].trim_end();
            }
        }
    }
    base.trim_end_matches(['"', ',', '}']).trim_end()
}

/// The last sentence of a text block, used as the repetition unit.
fn last_sentence(text: &str) -> String {
    let trimmed = text.trim_end();
    let without_final_period = trimmed.strip_suffix('.').unwrap_or(trimmed);
    let start = without_final_period.rfind('.').map(|i| i + 1).unwrap_or(0);
    let sentence = without_final_period[start..].trim();
    if sentence.is_empty() {
        trimmed
            .lines()
            .last()
            .unwrap_or("and so on")
            .trim()
            .to_string()
    } else {
        format!("{sentence}.")
    }
}

fn snap_char_boundary(text: &str, mut pos: usize) -> usize {
    pos = pos.min(text.len());
    while pos > 0 && !text.is_char_boundary(pos) {
        pos -= 1;
    }
    pos
}

const FILLER_QUESTION: &str = "\n*Question: A shopkeeper posts a notice disclaiming liability for injuries on the premises. A customer is injured that afternoon. What is the strongest analysis?\nA) The notice bars recovery entirely.\nB) The notice converts the claim into contract.\nC) The notice does not by itself bar recovery.\nD) The customer has no remedy at law.";

/// Generate a synthetic completion for the given mode. All modes need the
/// gold serialized target to operate on.
pub fn synthetic_complete(
    mode: SyntheticMode,
    request: &CompletionRequest,
    gold: Option<&str>,
) -> Result<CompletionResult, ClientError> {
    let gold = gold.ok_or_else(|| ClientError::MissingGold {
        mode: mode.as_str().to_string(),
    })?;
    let budget = char_budget(request.max_tokens);
    let result = match mode {
        SyntheticMode::Faithful => CompletionResult {
            text: gold.to_string(),
            finish_reason: FinishReason::Stop,
            latency: Duration::ZERO,
        },
        SyntheticMode::LoopRepetition => {
            let option_pos = find_first(gold, &OPTION_FIELD_MARKERS);
            let explanation_pos = find_first(gold, &EXPLANATION_FIELD_MARKERS);
            let mut base = match (option_pos, explanation_pos) {
                // option field comes after the explanation (fact-first):
                // the loop starts before the label is ever generated
                (Some(opt), Some(expl)) if opt > expl => trim_loop_base(&gold[..opt]).to_string(),
                // answer-first: the label is already out; the explanation
                // never terminates
                _ => trim_loop_base(gold).to_string(),
            };
            let sentence = last_sentence(&base);
            let mut repeats = 0;
            while base.len() < budget || repeats < 3 {
                base.push(' ');
                base.push_str(&sentence);
                repeats += 1;
                if repeats > 10_000 {
                    break;
                }
            }
            CompletionResult {
                text: base,
                finish_reason: FinishReason::Length,
                latency: Duration::ZERO,
            }
        }
        SyntheticMode::FictitiousQuestion => {
            let mut text = gold.to_string();
            while text.len() < budget.max(gold.len() + FILLER_QUESTION.len()) {
                text.push_str(FILLER_QUESTION);
            }
            CompletionResult {
                text,
                finish_reason: FinishReason::Length,
                latency: Duration::ZERO,
            }
        }
        SyntheticMode::PromptEcho => CompletionResult {
            text: format!("{}\n{gold}", request.system_text),
            finish_reason: FinishReason::Stop,
            latency: Duration::ZERO,
        },
        SyntheticMode::Truncated => {
            let option_pos = find_first(gold, &OPTION_FIELD_MARKERS);
            let explanation_pos = find_first(gold, &EXPLANATION_FIELD_MARKERS);
            let cut = match (option_pos, explanation_pos) {
                // fact-first: generation dies right after the option field
                // marker, before the letter appears
                (Some(opt), Some(expl)) if opt > expl => {
                    let marker = OPTION_FIELD_MARKERS
                        .iter()
                        .find(|m| gold[opt..].starts_with(**m))
                        .expect("marker located above");
                    opt + marker.len()
                }
                // answer-first: the trailing explanation is cut in half
                (_, Some(expl)) => expl + (gold.len() - expl) / 2,
                _ => gold.len() / 2,
            };
            CompletionResult {
                text: gold[..snap_char_boundary(gold, cut)].to_string(),
                finish_reason: FinishReason::Length,
                latency: Duration::ZERO,
            }
        }
    };
    Ok(result)
}

// ---------------------------------------------------------------------------
// Live HTTP backend

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
    seed: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stop: Vec<String>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireResponseMessage,
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireResponseMessage {
    content: Option<String>,
}

/// Counted semaphore bounding in-flight requests.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Semaphore {
        Semaphore {
            permits: Mutex::new(permits.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> SemaphoreGuard<'_> {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
        SemaphoreGuard { semaphore: self }
    }
}

struct SemaphoreGuard<'a> {
    semaphore: &'a Semaphore,
}

impl Drop for SemaphoreGuard<'_> {
    fn drop(&mut self) {
        let mut permits = self.semaphore.permits.lock().expect("semaphore poisoned");
        *permits += 1;
        self.semaphore.available.notify_one();
    }
}

/// Shareable live client for one endpoint.
pub struct HttpBackend {
    endpoint: ModelEndpoint,
    client: reqwest::blocking::Client,
    semaphore: Semaphore,
}

impl HttpBackend {
    pub fn new(endpoint: ModelEndpoint) -> Result<HttpBackend, ClientError> {
        endpoint.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(endpoint.request_timeout_secs))
            .build()
            .map_err(|e| ClientError::Protocol {
                detail: format!("client construction failed: {e}"),
            })?;
        let semaphore = Semaphore::new(endpoint.max_concurrent_requests);
        Ok(HttpBackend {
            endpoint,
            client,
            semaphore,
        })
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    fn resolve_token(&self) -> Result<Option<String>, ClientError> {
        match &self.endpoint.auth_token_env {
            None => Ok(None),
            Some(name) if name.is_empty() => Ok(None),
            Some(name) => std::env::var(name)
                .map(Some)
                .map_err(|_| ClientError::Auth {
                    detail: format!("environment variable {name} is not set"),
                }),
        }
    }

    /// One chat completion round-trip with retry on transient failures
    /// (connect errors, timeouts, 429, 5xx) and exponential backoff.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, ClientError> {
        let _permit = self.semaphore.acquire();
        let token = self.resolve_token()?;
        let url = format!(
            "{}/chat/completions",
            self.endpoint.base_url.trim_end_matches('/')
        );
        let body = WireRequest {
            model: &self.endpoint.model_name,
            messages: vec![
                WireMessage {
                    role: "system",
                    content: &request.system_text,
                },
                WireMessage {
                    role: "user",
                    content: &request.user_text,
                },
            ],
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
            stop: request.stop_sequences.clone(),
        };

        let started = Instant::now();
        let attempts = self.endpoint.max_retries + 1;
        let mut last_detail = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                let backoff = Duration::from_millis(
                    self.endpoint
                        .backoff_base_ms
                        .saturating_mul(1 << (attempt - 1).min(16)),
                );
                std::thread::sleep(backoff);
            }
            let mut call = self.client.post(&url).json(&body);
            if let Some(token) = &token {
                call = call.bearer_auth(token);
            }
            match call.send() {
                Err(e) => {
                    last_detail = format!("request error: {e}");
                    continue;
                }
                Ok(response) => {
                    let status = response.status();
                    if status.as_u16() == 401 || status.as_u16() == 403 {
                        return Err(ClientError::Auth {
                            detail: format!("endpoint returned {status}"),
                        });
                    }
                    if status.as_u16() == 429 || status.is_server_error() {
                        last_detail = format!("endpoint returned {status}");
                        continue;
                    }
                    if !status.is_success() {
                        return Err(ClientError::Protocol {
                            detail: format!("endpoint returned {status}"),
                        });
                    }
                    let envelope: WireResponse =
                        response.json().map_err(|e| ClientError::Protocol {
                            detail: format!("malformed response envelope: {e}"),
                        })?;
                    let choice = envelope.choices.into_iter().next().ok_or_else(|| {
                        ClientError::Protocol {
                            detail: "response has no choices".to_string(),
                        }
                    })?;
                    let text = choice
                        .message
                        .content
                        .ok_or_else(|| ClientError::Protocol {
                            detail: "first choice has no message content".to_string(),
                        })?;
                    let finish_reason = match choice.finish_reason.as_deref() {
                        Some("stop") => FinishReason::Stop,
                        Some("length") => FinishReason::Length,
                        Some(_) | None => FinishReason::Error,
                    };
                    return Ok(CompletionResult {
                        text,
                        finish_reason,
                        latency: started.elapsed(),
                    });
                }
            }
        }
        Err(ClientError::Transport {
            attempts,
            detail: last_detail,
        })
    }
}

/// One chat completion against a live endpoint.
pub fn complete(
    endpoint: &ModelEndpoint,
    request: &CompletionRequest,
) -> Result<CompletionResult, ClientError> {
    HttpBackend::new(endpoint.clone())?.complete(request)
}

// ---------------------------------------------------------------------------
// Unified backend

/// The three completion sources behind one call shape. Synthetic and replay
/// backends are deterministic; the live backend talks HTTP.
pub enum Backend {
    Http(HttpBackend),
    Replay {
        model_name: String,
        store: ReplayStore,
        lookups: AtomicU64,
    },
    Synthetic(SyntheticMode),
}

impl Backend {
    pub fn replay(model_name: impl Into<String>, store: ReplayStore) -> Backend {
        Backend::Replay {
            model_name: model_name.into(),
            store,
            lookups: AtomicU64::new(0),
        }
    }

    /// `gold` is the serialized gold target; only the synthetic backend uses
    /// it.
    pub fn complete(
        &self,
        request: &CompletionRequest,
        gold: Option<&str>,
    ) -> Result<CompletionResult, ClientError> {
        match self {
            Backend::Http(http) => http.complete(request),
            Backend::Replay {
                model_name,
                store,
                lookups,
            } => {
                lookups.fetch_add(1, Ordering::Relaxed);
                replay_complete(store, request, model_name)
            }
            Backend::Synthetic(mode) => synthetic_complete(*mode, request, gold),
        }
    }

    /// Number of replay lookups performed (0 for other backends).
    pub fn replay_lookups(&self) -> u64 {
        match self {
            Backend::Replay { lookups, .. } => lookups.load(Ordering::Relaxed),
            _ => 0,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Backend::Http(http) => format!(
                "http {} model={}",
                http.endpoint.base_url, http.endpoint.model_name
            ),
            Backend::Replay {
                model_name, store, ..
            } => format!("replay model={model_name} entries={}", store.len()),
            Backend::Synthetic(mode) => format!("synthetic mode={}", mode.as_str()),
        }
    }
}
