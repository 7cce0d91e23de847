//! Inference against chat-completions-compatible endpoints.
//!
//! [`complete`] wraps a [`ChatProvider`] with exponential-backoff retries.
//! [`batch_infer`] runs a split through a bounded worker pool and persists one
//! manifest line per document as soon as it finishes, so an interrupted run
//! resumes where it stopped.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{mpsc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::ingest::AnnotatedDocument;

pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ProviderError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("rate limited (HTTP {status})")]
    RateLimited { status: u16 },
    #[error("server error (HTTP {status}): {body}")]
    Server { status: u16, body: String },
    #[error("request rejected (HTTP {status}): {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport(_) | ProviderError::RateLimited { .. } | ProviderError::Server { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system: Option<String>,
    pub user: String,
}

impl ChatRequest {
    pub fn new(system: Option<String>, user: impl Into<String>) -> Self {
        Self {
            system,
            user: user.into(),
        }
    }

    /// Hex SHA-256 over the system and user messages.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.system.as_deref().unwrap_or("").as_bytes());
        h.update([0u8]);
        h.update(self.user.as_bytes());
        hex::encode(h.finalize())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_p: 1.0,
        }
    }
}

fn default_one() -> f64 {
    1.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_ms() -> u64 {
    500
}
fn default_backoff_max_ms() -> u64 {
    30_000
}
fn default_concurrency() -> usize {
    4
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_key_env() -> String {
    DEFAULT_API_KEY_ENV.to_string()
}

/// Endpoint and sampling settings. The API key itself is never stored; only
/// the name of the environment variable that holds it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default = "default_one")]
    pub temperature: f64,
    #[serde(default = "default_one")]
    pub top_p: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default = "default_backoff_max_ms")]
    pub backoff_max_ms: u64,
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl ProviderConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            temperature: 1.0,
            top_p: 1.0,
            max_retries: default_retries(),
            backoff_base_ms: default_backoff_ms(),
            backoff_max_ms: default_backoff_max_ms(),
            api_key_env: default_key_env(),
            concurrency: default_concurrency(),
            timeout_secs: default_timeout_secs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("temperature", self.temperature), ("top_p", self.top_p)] {
            if !(0.0..=2.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} must be in [0, 2], got {v}")));
            }
        }
        if self.concurrency == 0 {
            return Err(Error::InvalidArgument("concurrency must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams {
            temperature: self.temperature,
            top_p: self.top_p,
        }
    }

    fn backoff(&self, retry: u32) -> Duration {
        let ms = self.backoff_base_ms.saturating_mul(1u64 << retry.min(30));
        Duration::from_millis(ms.min(self.backoff_max_ms))
    }
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, request: &ChatRequest, params: &SamplingParams) -> Result<String, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn chat(&self, request: &ChatRequest, params: &SamplingParams) -> Result<String, ProviderError> {
        (**self).chat(request, params)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{error} (after {attempts} attempt(s))")]
pub struct CompletionFailure {
    pub error: ProviderError,
    pub attempts: u32,
}

/// Sends one request, retrying transient failures up to `max_retries` times.
pub fn complete(provider: &dyn ChatProvider, request: &ChatRequest, config: &ProviderConfig) -> Result<Completion, CompletionFailure> {
    let params = config.sampling();
    let mut attempts = 0;
    loop {
        attempts += 1;
        match provider.chat(request, &params) {
            Ok(text) => return Ok(Completion { text, attempts }),
            Err(error) if error.is_retryable() && attempts <= config.max_retries => {
                std::thread::sleep(config.backoff(attempts - 1));
            }
            Err(error) => return Err(CompletionFailure { error, attempts }),
        }
    }
}

// ---------------------------------------------------------------------------
// HTTP provider
// ---------------------------------------------------------------------------

pub struct HttpChatProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    top_p: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    content: Option<String>,
}

pub(crate) fn excerpt(body: &str) -> String {
    const MAX: usize = 300;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}…", &body[..i]),
        None => body.to_string(),
    }
}

pub(crate) fn classify_status(status: u16, body: &str) -> ProviderError {
    match status {
        429 => ProviderError::RateLimited { status },
        500..=599 => ProviderError::Server {
            status,
            body: excerpt(body),
        },
        _ => ProviderError::Rejected {
            status,
            body: excerpt(body),
        },
    }
}

pub(crate) fn build_client(timeout_secs: u64) -> Result<reqwest::blocking::Client> {
    reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(timeout_secs))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("http client: {e}")))
}

impl HttpChatProvider {
    /// Reads the API key from the environment variable named in the config.
    pub fn from_config(config: &ProviderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            client: build_client(config.timeout_secs)?,
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        })
    }
}

impl ChatProvider for HttpChatProvider {
    fn chat(&self, request: &ChatRequest, params: &SamplingParams) -> Result<String, ProviderError> {
        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &request.system {
            messages.push(WireMessage {
                role: "system",
                content: system,
            });
        }
        messages.push(WireMessage {
            role: "user",
            content: &request.user,
        });
        let body = WireRequest {
            model: &self.model,
            messages,
            temperature: params.temperature,
            top_p: params.top_p,
        };
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(classify_status(status, &text));
        }
        let parsed: WireResponse = serde_json::from_str(&text).map_err(|e| ProviderError::Malformed(format!("{e}: {}", excerpt(&text))))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| ProviderError::Malformed("no choices".into()))
    }
}

// ---------------------------------------------------------------------------
// Mock providers
// ---------------------------------------------------------------------------

/// Replays a fixed schedule of outcomes, then repeats `fallback` forever.
pub struct ScriptedProvider {
    steps: Mutex<VecDeque<Result<String, ProviderError>>>,
    fallback: Result<String, ProviderError>,
    calls: AtomicUsize,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedProvider {
    pub fn new(steps: impl IntoIterator<Item = Result<String, ProviderError>>, fallback: Result<String, ProviderError>) -> Self {
        Self {
            steps: Mutex::new(steps.into_iter().collect()),
            fallback,
            calls: AtomicUsize::new(0),
            seen: Mutex::new(Vec::new()),
        }
    }

    pub fn always(text: impl Into<String>) -> Self {
        Self::new([], Ok(text.into()))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl ChatProvider for ScriptedProvider {
    fn chat(&self, request: &ChatRequest, _: &SamplingParams) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(request.clone());
        self.steps.lock().unwrap().pop_front().unwrap_or_else(|| self.fallback.clone())
    }
}

/// Answers every request with a closure.
pub struct FnProvider<F> {
    f: F,
    calls: AtomicUsize,
}

impl<F> FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self {
            f,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&ChatRequest) -> Result<String, ProviderError> + Send + Sync,
{
    fn chat(&self, request: &ChatRequest, _: &SamplingParams) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.f)(request)
    }
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub run_id: String,
    pub corpus: String,
    pub prompt_mode: String,
    pub provider: ProviderConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl RunHeader {
    /// Header with a run id derived from corpus, mode, model and seed.
    pub fn new(corpus: impl Into<String>, prompt_mode: impl Into<String>, provider: ProviderConfig, seed: Option<u64>) -> Self {
        let corpus = corpus.into();
        let prompt_mode = prompt_mode.into();
        let mut h = Sha256::new();
        h.update(format!("{corpus}\0{prompt_mode}\0{}\0{seed:?}", provider.model));
        let run_id = hex::encode(&h.finalize()[..6]);
        Self {
            run_id,
            corpus,
            prompt_mode,
            provider,
            seed,
        }
    }

    fn same_run(&self, other: &RunHeader) -> bool {
        self.corpus == other.corpus
            && self.prompt_mode == other.prompt_mode
            && self.provider.model == other.provider.model
            && self.seed == other.seed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub doc_id: String,
    pub prompt_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: u64,
    pub attempts: u32,
}

impl ManifestRecord {
    pub fn is_success(&self) -> bool {
        self.response.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    InProgress,
    Complete,
    CompleteWithErrors,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ManifestLine {
    Header(RunHeader),
    Record(ManifestRecord),
    Status { status: RunStatus },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub header: RunHeader,
    pub records: Vec<ManifestRecord>,
    pub status: RunStatus,
}

impl RunManifest {
    /// Reads a manifest file. A torn final line (interrupted write) is ignored;
    /// later records for a doc_id replace earlier ones.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let lines: Vec<String> = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(path, e))?;
        let last = lines.iter().rposition(|l| !l.trim().is_empty());
        let mut header = None;
        let mut by_doc: BTreeMap<String, usize> = BTreeMap::new();
        let mut records: Vec<ManifestRecord> = Vec::new();
        let mut status = RunStatus::InProgress;
        for (i, line) in lines.iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = match serde_json::from_str(line) {
                Ok(p) => p,
                Err(_) if Some(i) == last => break,
                Err(e) => {
                    return Err(Error::Manifest {
                        path: path.to_path_buf(),
                        message: format!("line {}: {e}", i + 1),
                    })
                }
            };
            match parsed {
                ManifestLine::Header(h) => header = Some(h),
                ManifestLine::Record(r) => {
                    status = RunStatus::InProgress;
                    match by_doc.get(&r.doc_id) {
                        Some(&idx) => records[idx] = r,
                        None => {
                            by_doc.insert(r.doc_id.clone(), records.len());
                            records.push(r);
                        }
                    }
                }
                ManifestLine::Status { status: s } => status = s,
            }
        }
        let header = header.ok_or_else(|| Error::Manifest {
            path: path.to_path_buf(),
            message: "missing header line".into(),
        })?;
        Ok(Self { header, records, status })
    }

    pub fn responses(&self) -> BTreeMap<String, String> {
        self.records
            .iter()
            .filter_map(|r| r.response.clone().map(|resp| (r.doc_id.clone(), resp)))
            .collect()
    }

    pub fn error_count(&self) -> usize {
        self.records.iter().filter(|r| !r.is_success()).count()
    }
}

fn write_line(file: &mut File, path: &Path, line: &ManifestLine) -> Result<()> {
    let mut s = serde_json::to_string(line)?;
    s.push('\n');
    file.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))
}

fn rewrite(path: &Path, header: &RunHeader, records: &[ManifestRecord]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        write_line(&mut f, &tmp, &ManifestLine::Header(header.clone()))?;
        for r in records {
            write_line(&mut f, &tmp, &ManifestLine::Record(r.clone()))?;
        }
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs every document through the provider and persists the manifest.
///
/// All prompts are built before any request is sent, so a prompt-builder
/// error aborts the run without side effects. Documents already answered in
/// an existing manifest at `manifest_path` are skipped; earlier errors are
/// retried. Per-document provider failures are recorded and the run goes on.
pub fn batch_infer<B>(
    docs: &[AnnotatedDocument],
    header: RunHeader,
    build_prompt: B,
    provider: &dyn ChatProvider,
    manifest_path: impl AsRef<Path>,
) -> Result<RunManifest>
where
    B: Fn(&AnnotatedDocument) -> Result<ChatRequest>,
{
    let path = manifest_path.as_ref();
    let config = header.provider.clone();
    config.validate()?;

    let prompts: Vec<ChatRequest> = docs.iter().map(&build_prompt).collect::<Result<_>>()?;
    let hashes: Vec<String> = prompts.iter().map(ChatRequest::hash).collect();
    let split_ids: BTreeMap<&str, usize> = docs.iter().enumerate().map(|(i, d)| (d.doc_id.as_str(), i)).collect();

    let mut done: BTreeMap<String, ManifestRecord> = BTreeMap::new();
    let mut header = header;
    if path.exists() {
        let previous = RunManifest::load(path)?;
        if !previous.header.same_run(&header) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                message: format!(
                    "belongs to a different run ({} / {}), refusing to resume",
                    previous.header.corpus, previous.header.prompt_mode
                ),
            });
        }
        for r in previous.records.into_iter().filter(ManifestRecord::is_success) {
            let Some(&idx) = split_ids.get(r.doc_id.as_str()) else { continue };
            if r.prompt_hash != hashes[idx] {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    message: format!("prompt for `{}` changed since the recorded run", r.doc_id),
                });
            }
            done.insert(r.doc_id.clone(), r);
        }
        header = previous.header;
    }
    let kept: Vec<ManifestRecord> = docs.iter().filter_map(|d| done.get(&d.doc_id).cloned()).collect();
    rewrite(path, &header, &kept)?;

    let pending: Vec<usize> = (0..docs.len()).filter(|&i| !done.contains_key(&docs[i].doc_id)).collect();
    let mut file = OpenOptions::new().append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut fresh: Vec<ManifestRecord> = Vec::with_capacity(pending.len());

    let next = AtomicUsize::new(0);
    let workers = config.concurrency.min(pending.len()).max(1);
    let (tx, rx) = mpsc::channel::<ManifestRecord>();
    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, pending, docs, prompts, hashes, config) = (&next, &pending, docs, &prompts, &hashes, &config);
            scope.spawn(move || loop {
                let slot = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(slot) else { break };
                let started = Instant::now();
                let outcome = complete(provider, &prompts[i], config);
                let latency_ms = started.elapsed().as_millis() as u64;
                let record = match outcome {
                    Ok(c) => ManifestRecord {
                        doc_id: docs[i].doc_id.clone(),
                        prompt_hash: hashes[i].clone(),
                        response: Some(c.text),
                        error: None,
                        latency_ms,
                        attempts: c.attempts,
                    },
                    Err(f) => ManifestRecord {
                        doc_id: docs[i].doc_id.clone(),
                        prompt_hash: hashes[i].clone(),
                        response: None,
                        error: Some(f.error.to_string()),
                        latency_ms,
                        attempts: f.attempts,
                    },
                };
                if tx.send(record).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for record in rx {
            write_line(&mut file, path, &ManifestLine::Record(record.clone()))?;
            fresh.push(record);
        }
        Ok(())
    })?;

    let mut all: BTreeMap<String, ManifestRecord> = done;
    for r in fresh {
        all.insert(r.doc_id.clone(), r);
    }
    let records: Vec<ManifestRecord> = docs.iter().filter_map(|d| all.remove(&d.doc_id)).collect();
    let status = if records.iter().all(ManifestRecord::is_success) {
        RunStatus::Complete
    } else {
        RunStatus::CompleteWithErrors
    };
    write_line(&mut file, path, &ManifestLine::Status { status })?;
    file.sync_all().map_err(|e| Error::io(path, e))?;

    let seen: HashSet<&str> = records.iter().map(|r| r.doc_id.as_str()).collect();
    debug_assert_eq!(seen.len(), docs.len());
    Ok(RunManifest { header, records, status })
}
