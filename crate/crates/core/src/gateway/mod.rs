//! Uniform access to chat-completion backends: a real OpenAI-compatible HTTP
//! endpoint, a deterministic replay store, and scripted simulators, behind one
//! `Gateway` with content-addressed caching, retries, and bounded in-flight.

mod cache;
mod http;
mod replay;
mod scripted;

pub use cache::{Cache, CacheEntry};
pub use http::HttpBackend;
pub use replay::ReplayBackend;
pub use scripted::ScriptedBackend;

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::util::normalize_whitespace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.model_name.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("model_name is empty".into()));
        }
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("messages is empty".into()));
        }
        if self.messages.iter().any(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(
                "message with empty content".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} is not >= 0",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens is zero".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub prompt_units: u64,
    pub completion_units: u64,
    pub attempts: u32,
}

/// Decoding defaults carried alongside a gateway: which model to address and
/// how. The pipeline config owns the concrete values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rng_seed: Option<u64>,
}

fn default_temperature() -> f64 {
    0.7
}

fn default_max_tokens() -> u32 {
    1024
}

impl ModelParams {
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model_name: self.model_name.clone(),
            messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            rng_seed: self.rng_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Replay,
    Scripted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Full URL of the chat-completions endpoint. Required iff kind = http.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in config files or logs.
    #[serde(default)]
    pub credential_env_var: Option<String>,
    /// Directory of `<digest>.json` fixtures. Required iff kind = replay.
    #[serde(default)]
    pub fixtures_dir: Option<PathBuf>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
}

fn default_max_in_flight() -> usize {
    4
}

fn default_retry_limit() -> u32 {
    2
}

fn default_backoff_base_ms() -> u64 {
    250
}

impl BackendConfig {
    pub fn replay(fixtures_dir: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Replay,
            endpoint: None,
            credential_env_var: None,
            fixtures_dir: Some(fixtures_dir.into()),
            max_in_flight: default_max_in_flight(),
            retry_limit: default_retry_limit(),
            backoff_base_ms: default_backoff_base_ms(),
        }
    }

    pub fn scripted() -> Self {
        Self {
            kind: BackendKind::Scripted,
            endpoint: None,
            credential_env_var: None,
            fixtures_dir: None,
            max_in_flight: default_max_in_flight(),
            retry_limit: default_retry_limit(),
            backoff_base_ms: default_backoff_base_ms(),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => Err(GatewayError::InvalidRequest(
                "http backend requires an endpoint".into(),
            )),
            BackendKind::Replay if self.fixtures_dir.is_none() => Err(
                GatewayError::InvalidRequest("replay backend requires fixtures_dir".into()),
            ),
            _ if self.max_in_flight == 0 => Err(GatewayError::InvalidRequest(
                "max_in_flight must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend unavailable after {attempts} attempts: {detail}")]
    BackendUnavailable { attempts: u32, detail: String },
    #[error("auth error: {0}")]
    Auth(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no replay fixture for digest {0}")]
    MissingFixture(String),
    #[error("cache io error: {0}")]
    CacheIo(String),
}

/// Error classes a backend can report for a single invocation. Transient
/// failures are retried; everything else fails fast.
#[derive(Debug, Clone)]
pub enum InvokeError {
    Transient(String),
    Auth(String),
    Malformed(String),
    MissingFixture(String),
}

/// What a backend returns for one successful invocation; the gateway adds
/// attempt bookkeeping on top.
#[derive(Debug, Clone)]
pub struct BackendReply {
    pub content: String,
    pub finish_reason: FinishReason,
    pub prompt_units: u64,
    pub completion_units: u64,
}

impl BackendReply {
    /// A normal completion with deterministic unit counts derived from the
    /// request and reply texts. Simulators use this so cache files stay
    /// byte-identical across runs.
    pub fn stop(request: &ChatRequest, content: impl Into<String>) -> Self {
        let content = content.into();
        let prompt_units: u64 = request
            .messages
            .iter()
            .map(|m| m.content.chars().count() as u64)
            .sum();
        let completion_units = content.chars().count() as u64;
        Self {
            content,
            finish_reason: FinishReason::Stop,
            prompt_units,
            completion_units,
        }
    }
}

pub trait Backend: Send + Sync {
    fn invoke(&self, request: &ChatRequest) -> Result<BackendReply, InvokeError>;
}

/// Hex digest of the canonical request serialization. Fields appear in a
/// fixed order and message content is whitespace-normalized, so requests
/// that differ only in field order or spacing share a key.
pub fn cache_key(request: &ChatRequest) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"model=");
    hasher.update(normalize_whitespace(&request.model_name).as_bytes());
    hasher.update(b"\x1etemperature=");
    hasher.update(request.temperature.to_string().as_bytes());
    hasher.update(b"\x1emax_tokens=");
    hasher.update(request.max_tokens.to_string().as_bytes());
    hasher.update(b"\x1erng_seed=");
    match request.rng_seed {
        Some(seed) => hasher.update(seed.to_string().as_bytes()),
        None => hasher.update(b"none"),
    }
    hasher.update(b"\x1emessages=");
    for message in &request.messages {
        hasher.update(message.role.as_str().as_bytes());
        hasher.update(b"\x1f");
        hasher.update(normalize_whitespace(&message.content).as_bytes());
        hasher.update(b"\x1d");
    }
    hex::encode(hasher.finalize())
}

/// Counting semaphore bounding in-flight backend invocations.
struct Slots {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Slots {
    fn new(capacity: usize) -> Self {
        Self {
            available: Mutex::new(capacity.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut available = self.available.lock().unwrap();
        while *available == 0 {
            available = self.freed.wait(available).unwrap();
        }
        *available -= 1;
        SlotGuard { slots: self }
    }
}

struct SlotGuard<'a> {
    slots: &'a Slots,
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.slots.available.lock().unwrap() += 1;
        self.slots.freed.notify_one();
    }
}

/// One configured backend plus cache, retry policy, and in-flight bound.
/// Safe to share across worker threads.
pub struct Gateway {
    backend: Arc<dyn Backend>,
    cache: Option<Cache>,
    max_in_flight: usize,
    retry_limit: u32,
    backoff_base: Duration,
    slots: Slots,
}

impl Gateway {
    /// Build a gateway from config. Scripted configs get the standard course
    /// simulator suite; construct `from_parts` directly for custom scripts.
    pub fn new(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        let backend: Arc<dyn Backend> = match config.kind {
            BackendKind::Http => Arc::new(HttpBackend::from_config(config)?),
            BackendKind::Replay => Arc::new(ReplayBackend::new(
                config.fixtures_dir.clone().expect("validated"),
            )),
            BackendKind::Scripted => Arc::new(crate::sim::course_sim()),
        };
        Ok(Self::from_parts(backend, config))
    }

    pub fn from_parts(backend: Arc<dyn Backend>, config: &BackendConfig) -> Self {
        Self {
            backend,
            cache: None,
            max_in_flight: config.max_in_flight.max(1),
            retry_limit: config.retry_limit,
            backoff_base: Duration::from_millis(config.backoff_base_ms),
            slots: Slots::new(config.max_in_flight),
        }
    }

    /// Enable the content-addressed response cache in `dir`.
    pub fn with_cache_dir(mut self, dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        self.cache = Some(Cache::open(dir.into())?);
        Ok(self)
    }

    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight
    }

    /// Issue one completion: cache lookup, then backend invocation with
    /// exponential backoff on transient failures. Successes are cached.
    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate()?;
        let digest = cache_key(request);
        if let Some(cache) = &self.cache {
            if let Some(entry) = cache.load(&digest)? {
                return Ok(entry.response);
            }
        }

        let mut attempts = 0u32;
        let response = loop {
            attempts += 1;
            let _slot = self.slots.acquire();
            match self.backend.invoke(request) {
                Ok(reply) => {
                    if reply.finish_reason == FinishReason::Stop && reply.content.is_empty() {
                        return Err(GatewayError::MalformedResponse(
                            "empty content with finish_reason stop".into(),
                        ));
                    }
                    break ChatResponse {
                        content: reply.content,
                        finish_reason: reply.finish_reason,
                        prompt_units: reply.prompt_units,
                        completion_units: reply.completion_units,
                        attempts,
                    };
                }
                Err(InvokeError::Transient(detail)) => {
                    if attempts > self.retry_limit {
                        return Err(GatewayError::BackendUnavailable { attempts, detail });
                    }
                    drop(_slot);
                    let backoff = self.backoff_base * 2u32.saturating_pow(attempts - 1);
                    if !backoff.is_zero() {
                        std::thread::sleep(backoff);
                    }
                }
                Err(InvokeError::Auth(detail)) => return Err(GatewayError::Auth(detail)),
                Err(InvokeError::Malformed(detail)) => {
                    return Err(GatewayError::MalformedResponse(detail))
                }
                Err(InvokeError::MissingFixture(digest)) => {
                    return Err(GatewayError::MissingFixture(digest))
                }
            }
        };

        if let Some(cache) = &self.cache {
            cache.store(&digest, request, &response)?;
        }
        Ok(response)
    }

    /// Complete a batch with at most `max_in_flight` requests outstanding.
    /// Results come back in input order; per-request failures occupy their
    /// slot without aborting the rest.
    pub fn complete_batch(
        &self,
        requests: &[ChatRequest],
    ) -> Vec<Result<ChatResponse, GatewayError>> {
        let n = requests.len();
        if n == 0 {
            return Vec::new();
        }
        let workers = self.max_in_flight.min(n);
        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<ChatResponse, GatewayError>>>> =
            (0..n).map(|_| Mutex::new(None)).collect();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let index = next.fetch_add(1, Ordering::SeqCst);
                    if index >= n {
                        break;
                    }
                    let outcome = self.complete(&requests[index]);
                    *results[index].lock().unwrap() = Some(outcome);
                });
            }
        });

        results
            .into_iter()
            .map(|slot| {
                slot.into_inner()
                    .unwrap()
                    .expect("worker filled every slot")
            })
            .collect()
    }
}
