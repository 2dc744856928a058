//! Model access: live HTTP, record-through, and offline replay.
//!
//! The replay cache is a JSONL file keyed by prompt digest. In record mode
//! every live response is appended; in replay mode nothing leaves the
//! process and a missing digest is an error.

use crate::promptkit::PromptBundle;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::{Duration, Instant};
use thiserror::Error;

pub const API_BASE_ENV: &str = "SUITESMITH_API_BASE";
pub const API_KEY_ENV: &str = "SUITESMITH_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Complete,
    Truncated,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub digest: String,
    pub raw_text: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    Live,
    Replay,
    Record,
}

impl FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(BackendMode::Live),
            "replay" => Ok(BackendMode::Replay),
            "record" => Ok(BackendMode::Record),
            other => Err(format!("unknown backend mode `{other}` (live, replay or record)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("replay cache has no response for digest {0}")]
    CacheMiss(String),
    #[error("backend not configured: {0}")]
    NotConfigured(String),
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("replay cache {path}: {message}")]
    Cache { path: PathBuf, message: String },
}

/// Failure of a single request.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    /// Worth retrying: network trouble, rate limits, server errors.
    #[error("{0}")]
    Retryable(String),
    #[error("{0}")]
    Fatal(String),
    /// The backend refused the prompt as too large.
    #[error("prompt rejected: {0}")]
    PromptTooLarge(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportReply {
    pub text: String,
    pub finish: FinishReason,
}

/// Something that turns a prompt into text.
pub trait Transport: Send + Sync {
    fn complete(&self, bundle: &PromptBundle) -> Result<TransportReply, TransportError>;
}

/// One canned reply for [`ScriptedTransport`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedResponse {
    pub problem_id: String,
    /// Test code, sent back inside a python code fence.
    pub text: String,
    /// Reply as if the output token budget ran out: no closing fence.
    #[serde(default)]
    pub truncated: bool,
}

/// Serves canned replies, for offline runs and fixtures. Among the replies
/// scripted for a problem, the prompt digest picks one, so a given prompt
/// always gets the same reply.
#[derive(Debug, Clone, Default)]
pub struct ScriptedTransport {
    responses: BTreeMap<String, Vec<ScriptedResponse>>,
}

impl ScriptedTransport {
    pub fn new(responses: impl IntoIterator<Item = ScriptedResponse>) -> Self {
        let mut by_problem: BTreeMap<String, Vec<ScriptedResponse>> = BTreeMap::new();
        for r in responses {
            by_problem.entry(r.problem_id.clone()).or_default().push(r);
        }
        ScriptedTransport { responses: by_problem }
    }

    /// Reads one [`ScriptedResponse`] per line; other fields are ignored.
    pub fn from_jsonl(path: &Path) -> Result<Self, GatewayError> {
        let err = |message: String| GatewayError::Cache {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let responses = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| err(format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<ScriptedResponse>, _>>()?;
        Ok(Self::new(responses))
    }

    pub fn len(&self) -> usize {
        self.responses.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    /// The reply `bundle` will get.
    pub fn pick(&self, bundle: &PromptBundle) -> Option<&ScriptedResponse> {
        use sha2::{Digest, Sha256};
        let options = self.responses.get(&bundle.problem_id)?;
        let h = Sha256::digest(bundle.digest.as_bytes());
        let n = u64::from_be_bytes(h[..8].try_into().expect("8 bytes"));
        options.get((n % options.len() as u64) as usize)
    }
}

impl Transport for ScriptedTransport {
    fn complete(&self, bundle: &PromptBundle) -> Result<TransportReply, TransportError> {
        let r = self
            .pick(bundle)
            .ok_or_else(|| TransportError::Fatal(format!("no scripted reply for {}", bundle.problem_id)))?;
        let body = r.text.trim_end();
        Ok(if r.truncated {
            TransportReply {
                text: format!("```python\n{body}"),
                finish: FinishReason::Truncated,
            }
        } else {
            TransportReply {
                text: format!("```python\n{body}\n```\n"),
                finish: FinishReason::Complete,
            }
        })
    }
}

/// Chat-completions style endpoint: `POST {base}/chat/completions`.
pub struct HttpTransport {
    base: String,
    key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpTransport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpTransport")
            .field("base", &self.base)
            .finish_non_exhaustive()
    }
}

impl HttpTransport {
    pub fn new(base: &str, key: &str, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        HttpTransport {
            base: base.trim_end_matches('/').to_string(),
            key: key.to_string(),
            agent: ureq::Agent::new_with_config(config),
        }
    }

    /// Reads the endpoint and credential from the environment.
    pub fn from_env(timeout: Duration) -> Result<Self, GatewayError> {
        let base = std::env::var(API_BASE_ENV)
            .map_err(|_| GatewayError::NotConfigured(format!("{API_BASE_ENV} is not set")))?;
        let key =
            std::env::var(API_KEY_ENV).map_err(|_| GatewayError::NotConfigured(format!("{API_KEY_ENV} is not set")))?;
        Ok(Self::new(&base, &key, timeout))
    }

    pub fn secret(&self) -> &str {
        &self.key
    }
}

impl Transport for HttpTransport {
    fn complete(&self, bundle: &PromptBundle) -> Result<TransportReply, TransportError> {
        let body = serde_json::json!({
            "model": bundle.params.model_id,
            "temperature": bundle.params.temperature,
            "max_tokens": bundle.params.max_output_tokens,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
        });
        let url = format!("{}/chat/completions", self.base);
        let mut response = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.key))
            .send_json(&body)
            .map_err(|e| TransportError::Retryable(scrub(&e.to_string(), &[&self.key])))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Retryable(scrub(&e.to_string(), &[&self.key])))?;
        let text = scrub(&text, &[&self.key]);
        match status {
            200..=299 => parse_completion(&text),
            413 => Err(TransportError::PromptTooLarge(text)),
            400 if text.contains("context_length") || text.contains("too long") || text.contains("maximum context") => {
                Err(TransportError::PromptTooLarge(text))
            }
            408 | 409 | 429 | 500..=599 => Err(TransportError::Retryable(format!("HTTP {status}: {text}"))),
            _ => Err(TransportError::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}

fn parse_completion(body: &str) -> Result<TransportReply, TransportError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| TransportError::Retryable(format!("bad JSON from backend: {e}")))?;
    let choice = &value["choices"][0];
    let text = choice["message"]["content"]
        .as_str()
        .ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))?;
    let finish = match choice["finish_reason"].as_str() {
        Some("length") => FinishReason::Truncated,
        Some("content_filter") => FinishReason::Error,
        _ => FinishReason::Complete,
    };
    Ok(TransportReply {
        text: text.to_string(),
        finish,
    })
}

/// Replaces every occurrence of each non-empty secret with `***`.
pub fn scrub(text: &str, secrets: &[&str]) -> String {
    let mut out = text.to_string();
    for secret in secrets.iter().filter(|s| s.len() >= 4) {
        out = out.replace(secret, "***");
    }
    out
}

/// Digest-keyed response store backed by a JSONL file.
#[derive(Debug)]
pub struct ReplayCache {
    entries: BTreeMap<String, ModelResponse>,
    origin: PathBuf,
    writer: Option<File>,
}

#[derive(Serialize, Deserialize)]
struct CacheRecord {
    digest: String,
    raw_text: String,
    finish_reason: FinishReason,
    #[serde(default)]
    latency_ms: u64,
}

impl ReplayCache {
    /// Loads an existing cache read-only.
    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let entries = Self::read_entries(path)?;
        Ok(ReplayCache {
            entries,
            origin: path.to_path_buf(),
            writer: None,
        })
    }

    /// Loads (or creates) a cache and keeps it open for appending.
    pub fn open_for_append(path: &Path) -> Result<Self, GatewayError> {
        let err = |e: std::io::Error| GatewayError::Cache {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(err)?;
        }
        let writer = OpenOptions::new().create(true).append(true).open(path).map_err(err)?;
        let entries = Self::read_entries(path)?;
        Ok(ReplayCache {
            entries,
            origin: path.to_path_buf(),
            writer: Some(writer),
        })
    }

    /// An empty in-memory cache (nothing is persisted).
    pub fn in_memory() -> Self {
        ReplayCache {
            entries: BTreeMap::new(),
            origin: PathBuf::new(),
            writer: None,
        }
    }

    fn read_entries(path: &Path) -> Result<BTreeMap<String, ModelResponse>, GatewayError> {
        let err = |message: String| GatewayError::Cache {
            path: path.to_path_buf(),
            message,
        };
        let file = File::open(path).map_err(|e| err(e.to_string()))?;
        let mut entries = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord = serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
            // first write wins; the file is append-only
            entries.entry(rec.digest.clone()).or_insert(ModelResponse {
                digest: rec.digest,
                raw_text: rec.raw_text,
                finish_reason: rec.finish_reason,
                latency_ms: rec.latency_ms,
            });
        }
        Ok(entries)
    }

    pub fn origin(&self) -> &Path {
        &self.origin
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, digest: &str) -> Option<&ModelResponse> {
        self.entries.get(digest)
    }

    /// Stores a response unless its digest is already present.
    pub fn append(&mut self, response: &ModelResponse) -> Result<(), GatewayError> {
        if self.entries.contains_key(&response.digest) {
            return Ok(());
        }
        if let Some(w) = self.writer.as_mut() {
            let rec = CacheRecord {
                digest: response.digest.clone(),
                raw_text: response.raw_text.clone(),
                finish_reason: response.finish_reason,
                latency_ms: response.latency_ms,
            };
            let mut line = serde_json::to_string(&rec).expect("serializable");
            line.push('\n');
            w.write_all(line.as_bytes())
                .and_then(|_| w.flush())
                .map_err(|e| GatewayError::Cache {
                    path: self.origin.clone(),
                    message: e.to_string(),
                })?;
        }
        self.entries.insert(response.digest.clone(), response.clone());
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(500),
        }
    }
}

/// Routes bundles to the transport and/or cache depending on the mode.
pub struct Gateway {
    mode: BackendMode,
    transport: Option<Box<dyn Transport>>,
    cache: Option<Mutex<ReplayCache>>,
    retry: RetryPolicy,
    secrets: Vec<String>,
}

impl Gateway {
    pub fn replay(cache: ReplayCache) -> Self {
        Gateway {
            mode: BackendMode::Replay,
            transport: None,
            cache: Some(Mutex::new(cache)),
            retry: RetryPolicy::default(),
            secrets: Vec::new(),
        }
    }

    pub fn live(transport: Box<dyn Transport>) -> Self {
        Gateway {
            mode: BackendMode::Live,
            transport: Some(transport),
            cache: None,
            retry: RetryPolicy::default(),
            secrets: Vec::new(),
        }
    }

    pub fn record(transport: Box<dyn Transport>, cache: ReplayCache) -> Self {
        Gateway {
            mode: BackendMode::Record,
            transport: Some(transport),
            cache: Some(Mutex::new(cache)),
            retry: RetryPolicy::default(),
            secrets: Vec::new(),
        }
    }

    /// Builds a gateway for `mode`, reading the HTTP endpoint from the
    /// environment for live and record modes.
    pub fn from_mode(mode: BackendMode, cache_path: &Path, timeout: Duration) -> Result<Self, GatewayError> {
        match mode {
            BackendMode::Replay => Ok(Self::replay(ReplayCache::open(cache_path)?)),
            BackendMode::Live => {
                let http = HttpTransport::from_env(timeout)?;
                let secret = http.secret().to_string();
                Ok(Self::live(Box::new(http)).with_secret(secret))
            }
            BackendMode::Record => {
                let http = HttpTransport::from_env(timeout)?;
                let secret = http.secret().to_string();
                let cache = ReplayCache::open_for_append(cache_path)?;
                Ok(Self::record(Box::new(http), cache).with_secret(secret))
            }
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Registers a value that must never appear in responses or errors.
    pub fn with_secret(mut self, secret: impl Into<String>) -> Self {
        self.secrets.push(secret.into());
        self
    }

    pub fn mode(&self) -> BackendMode {
        self.mode
    }

    pub fn generate(&self, bundle: &PromptBundle) -> Result<ModelResponse, GatewayError> {
        if matches!(self.mode, BackendMode::Replay | BackendMode::Record) {
            let cache = self
                .cache
                .as_ref()
                .expect("cache for replay/record")
                .lock()
                .expect("cache lock");
            if let Some(hit) = cache.get(&bundle.digest) {
                return Ok(hit.clone());
            }
            if self.mode == BackendMode::Replay {
                return Err(GatewayError::CacheMiss(bundle.digest.clone()));
            }
        }
        let response = self.call_live(bundle)?;
        if self.mode == BackendMode::Record {
            let mut cache = self.cache.as_ref().expect("cache").lock().expect("cache lock");
            cache.append(&response)?;
        }
        Ok(response)
    }

    fn call_live(&self, bundle: &PromptBundle) -> Result<ModelResponse, GatewayError> {
        let transport = self
            .transport
            .as_ref()
            .ok_or_else(|| GatewayError::NotConfigured("no transport".into()))?;
        let secrets: Vec<&str> = self.secrets.iter().map(String::as_str).collect();
        let started = Instant::now();
        let mut last = String::new();
        for attempt in 1..=self.retry.attempts.max(1) {
            match transport.complete(bundle) {
                Ok(reply) => {
                    return Ok(ModelResponse {
                        digest: bundle.digest.clone(),
                        raw_text: scrub(&reply.text, &secrets),
                        finish_reason: reply.finish,
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(TransportError::PromptTooLarge(msg)) => {
                    return Ok(ModelResponse {
                        digest: bundle.digest.clone(),
                        raw_text: scrub(&msg, &secrets),
                        finish_reason: FinishReason::Error,
                        latency_ms: started.elapsed().as_millis() as u64,
                    })
                }
                Err(TransportError::Fatal(msg)) => {
                    return Err(GatewayError::Transport {
                        attempts: attempt,
                        message: scrub(&msg, &secrets),
                    })
                }
                Err(TransportError::Retryable(msg)) => {
                    last = scrub(&msg, &secrets);
                    if attempt < self.retry.attempts {
                        std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
                    }
                }
            }
        }
        Err(GatewayError::Transport {
            attempts: self.retry.attempts.max(1),
            message: last,
        })
    }

    /// Generates for every bundle with at most `limit` requests in flight.
    /// Results are returned in input order.
    pub fn generate_all(&self, bundles: &[PromptBundle], limit: usize) -> Vec<Result<ModelResponse, GatewayError>> {
        let limit = limit.max(1);
        if limit == 1 || bundles.len() <= 1 || self.mode == BackendMode::Replay {
            return bundles.iter().map(|b| self.generate(b)).collect();
        }
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<ModelResponse, GatewayError>>>> =
            bundles.iter().map(|_| Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..limit.min(bundles.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= bundles.len() {
                        break;
                    }
                    let r = self.generate(&bundles[i]);
                    *slots[i].lock().expect("slot") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot").expect("filled"))
            .collect()
    }
}

/// Code pulled out of a response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extraction {
    pub candidates: Vec<String>,
    /// The backend said so, or the last code fence was never closed.
    pub truncated: bool,
}

fn is_fence(line: &str) -> bool {
    line.trim_start().starts_with("```")
}

/// Fenced code blocks in document order, or the whole text when there are
/// none. Text inside fences is kept byte for byte.
pub fn extract_test_code(response: &ModelResponse) -> Extraction {
    let raw = &response.raw_text;
    let mut candidates = Vec::new();
    let mut open: Option<usize> = None;
    let mut offset = 0;
    let mut any_fence = false;
    for line in raw.split_inclusive('\n') {
        if is_fence(line) {
            any_fence = true;
            match open.take() {
                None => open = Some(offset + line.len()),
                Some(start) => {
                    let code = raw[start..offset].strip_suffix('\n').unwrap_or(&raw[start..offset]);
                    if !code.trim().is_empty() {
                        candidates.push(code.to_string());
                    }
                }
            }
        }
        offset += line.len();
    }
    let mut truncated = response.finish_reason == FinishReason::Truncated;
    if let Some(start) = open {
        truncated = true;
        let code = &raw[start.min(raw.len())..];
        if !code.trim().is_empty() {
            candidates.push(code.to_string());
        }
    }
    if !any_fence && !raw.trim().is_empty() {
        candidates.push(raw.clone());
    }
    Extraction { candidates, truncated }
}
