//! Client for OpenAI-compatible chat-completion and embedding endpoints,
//! with retries, an in-flight admission bound, and a content-addressed
//! response cache on disk.
//!
//! The cache makes every LLM-dependent stage replayable: a run against a
//! populated cache issues zero network calls and reproduces its outputs
//! byte for byte.

use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Error, Debug)]
pub enum GatewayError {
    #[error("API key environment variable {0} is not set")]
    MissingApiKey(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("retries exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("empty input")]
    EmptyInput,
    #[error("response cardinality mismatch (sent {sent}, got {got})")]
    CardinalityMismatch { sent: usize, got: usize },
    #[error("embedding dimension mismatch ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("zero-vector embedding at index {0}")]
    ZeroVector(usize),
    #[error("cache miss in offline mode for request {0}")]
    OfflineMiss(String),
    #[error("cache I/O error at {path}: {source}")]
    Cache {
        path: String,
        source: std::io::Error,
    },
}

/// One chat-completion request.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ChatRequest {
    pub model: String,
    pub system: Option<String>,
    pub user: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: u32,
}

impl ChatRequest {
    pub fn new(model: impl Into<String>, user: impl Into<String>) -> Self {
        ChatRequest {
            model: model.into(),
            system: None,
            user: user.into(),
            temperature: 0.2,
            top_p: 1.0,
            max_new_tokens: 512,
        }
    }

    pub fn system(mut self, system: impl Into<String>) -> Self {
        self.system = Some(system.into());
        self
    }

    pub fn temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn top_p(mut self, top_p: f64) -> Self {
        self.top_p = top_p;
        self
    }

    pub fn max_new_tokens(mut self, max_new_tokens: u32) -> Self {
        self.max_new_tokens = max_new_tokens;
        self
    }
}

/// Retry schedule for transient failures (transport errors, 429, 5xx).
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            backoff: vec![
                Duration::from_millis(100),
                Duration::from_millis(500),
                Duration::from_millis(2000),
            ],
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let idx = (attempt as usize).min(self.backoff.len().saturating_sub(1));
        self.backoff.get(idx).copied().unwrap_or_default()
    }
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub base_url: String,
    pub api_key_env: String,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub cache_dir: Option<PathBuf>,
    /// Inputs per embedding request.
    pub embed_batch_size: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            api_key_env: "RAGKIT_API_KEY".into(),
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            cache_dir: None,
            embed_batch_size: 256,
        }
    }
}

/// The wire layer under the gateway: one chat call, one embedding call.
/// Swappable so tests and replay runs never touch the network.
pub trait Transport: Send + Sync {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError>;
    fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f32>>, GatewayError>;
}

/// HTTP transport speaking the OpenAI-compatible JSON shapes.
pub struct HttpTransport {
    base_url: String,
    api_key_env: String,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(base_url: impl Into<String>, api_key_env: impl Into<String>, retry: RetryPolicy) -> Self {
        HttpTransport {
            base_url: base_url.into(),
            api_key_env: api_key_env.into(),
            retry,
            client: reqwest::blocking::Client::new(),
        }
    }

    fn api_key(&self) -> Result<String, GatewayError> {
        std::env::var(&self.api_key_env)
            .map_err(|_| GatewayError::MissingApiKey(self.api_key_env.clone()))
    }

    /// POST with the retry schedule. Retries transport failures, 429, and
    /// 5xx; any other non-success status fails immediately.
    fn post_json(
        &self,
        path: &str,
        body: &serde_json::Value,
    ) -> Result<serde_json::Value, GatewayError> {
        let key = self.api_key()?;
        let url = format!("{}{}", self.base_url.trim_end_matches('/'), path);
        let mut last = String::new();
        for attempt in 0..self.retry.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.delay(attempt - 1));
            }
            let sent = self
                .client
                .post(&url)
                .bearer_auth(&key)
                .json(body)
                .send();
            match sent {
                Err(e) => last = e.to_string(),
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        return response
                            .json()
                            .map_err(|e| GatewayError::MalformedResponse(e.to_string()));
                    }
                    let body = response.text().unwrap_or_default();
                    if status.as_u16() == 429 || status.is_server_error() {
                        last = format!("HTTP {}: {}", status.as_u16(), body);
                    } else {
                        return Err(GatewayError::Http {
                            status: status.as_u16(),
                            body,
                        });
                    }
                }
            }
        }
        Err(GatewayError::RetriesExhausted {
            attempts: self.retry.max_attempts,
            last,
        })
    }
}

impl Transport for HttpTransport {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let mut messages = Vec::new();
        if let Some(system) = &request.system {
            messages.push(serde_json::json!({"role": "system", "content": system}));
        }
        messages.push(serde_json::json!({"role": "user", "content": request.user}));
        let body = serde_json::json!({
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_new_tokens,
        });
        let value = self.post_json("/chat/completions", &body)?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::MalformedResponse("no choices[0].message.content".into())
            })
    }

    fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f32>>, GatewayError> {
        let body = serde_json::json!({"input": texts, "model": model});
        let value = self.post_json("/embeddings", &body)?;
        let data = value["data"]
            .as_array()
            .ok_or_else(|| GatewayError::MalformedResponse("no data array".into()))?;
        let mut vectors = Vec::with_capacity(data.len());
        for entry in data {
            let embedding = entry["embedding"]
                .as_array()
                .ok_or_else(|| GatewayError::MalformedResponse("no embedding array".into()))?
                .iter()
                .map(|v| v.as_f64().unwrap_or(f64::NAN) as f32)
                .collect();
            vectors.push(embedding);
        }
        Ok(vectors)
    }
}

/// Transport that never reaches the network; every cache miss is an error.
/// Used for byte-exact replay runs.
pub struct OfflineTransport;

impl Transport for OfflineTransport {
    fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        Err(GatewayError::OfflineMiss(cache_key_chat(request)))
    }

    fn embed(&self, texts: &[String], model: &str) -> Result<Vec<Vec<f32>>, GatewayError> {
        Err(GatewayError::OfflineMiss(cache_key_embed(texts, model)))
    }
}

/// Counting semaphore bounding concurrent outstanding transport calls.
struct InFlightGate {
    permits: Mutex<usize>,
    available: Condvar,
}

impl InFlightGate {
    fn new(limit: usize) -> Self {
        InFlightGate {
            permits: Mutex::new(limit.max(1)),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) -> InFlightPermit<'_> {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.available.wait(permits).unwrap();
        }
        *permits -= 1;
        InFlightPermit { gate: self }
    }
}

struct InFlightPermit<'a> {
    gate: &'a InFlightGate,
}

impl Drop for InFlightPermit<'_> {
    fn drop(&mut self) {
        *self.gate.permits.lock().unwrap() += 1;
        self.gate.available.notify_one();
    }
}

#[derive(Serialize, Deserialize)]
struct CachedChat {
    request: ChatRequest,
    response: String,
}

#[derive(Serialize, Deserialize)]
struct CachedEmbedding {
    model: String,
    input: Vec<String>,
    vectors: Vec<Vec<f32>>,
}

fn cache_key_chat(request: &ChatRequest) -> String {
    let descriptor = serde_json::json!({"endpoint": "chat", "request": request});
    hash_hex(&descriptor.to_string())
}

fn cache_key_embed(texts: &[String], model: &str) -> String {
    let descriptor = serde_json::json!({"endpoint": "embed", "model": model, "input": texts});
    hash_hex(&descriptor.to_string())
}

fn hash_hex(content: &str) -> String {
    let digest = Sha256::digest(content.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Unified client for chat and embedding calls.
pub struct Gateway {
    transport: Box<dyn Transport>,
    cache_dir: Option<PathBuf>,
    gate: InFlightGate,
    embed_batch_size: usize,
}

impl Gateway {
    /// Gateway speaking HTTP per the config.
    pub fn new(config: GatewayConfig) -> Self {
        let transport = HttpTransport::new(
            config.base_url.clone(),
            config.api_key_env.clone(),
            config.retry.clone(),
        );
        Self::with_transport(Box::new(transport), config)
    }

    /// Gateway over a caller-supplied transport. Tests use scripted
    /// transports; replay runs use [`OfflineTransport`].
    pub fn with_transport(transport: Box<dyn Transport>, config: GatewayConfig) -> Self {
        Gateway {
            transport,
            cache_dir: config.cache_dir,
            gate: InFlightGate::new(config.max_in_flight),
            embed_batch_size: config.embed_batch_size.max(1),
        }
    }

    /// Gateway that only serves from an existing cache directory.
    pub fn offline(cache_dir: impl Into<PathBuf>) -> Self {
        Self::with_transport(
            Box::new(OfflineTransport),
            GatewayConfig {
                cache_dir: Some(cache_dir.into()),
                ..GatewayConfig::default()
            },
        )
    }

    fn cache_path(&self, key: &str) -> Option<PathBuf> {
        self.cache_dir.as_ref().map(|dir| dir.join(format!("{key}.json")))
    }

    fn cache_read<T: serde::de::DeserializeOwned>(&self, key: &str) -> Option<T> {
        let path = self.cache_path(key)?;
        let bytes = std::fs::read(path).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    fn cache_write<T: Serialize>(&self, key: &str, value: &T) -> Result<(), GatewayError> {
        let Some(path) = self.cache_path(key) else {
            return Ok(());
        };
        let as_err = |source| GatewayError::Cache {
            path: path.display().to_string(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(as_err)?;
        }
        let body = serde_json::to_vec_pretty(value).expect("cache entries serialize");
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, body).map_err(as_err)?;
        std::fs::rename(&tmp, &path).map_err(as_err)?;
        Ok(())
    }

    /// Complete a chat request, serving identical requests from the cache
    /// when one is configured.
    pub fn chat_complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        let key = cache_key_chat(request);
        if let Some(hit) = self.cache_read::<CachedChat>(&key) {
            return Ok(hit.response);
        }
        let response = {
            let _permit = self.gate.acquire();
            self.transport.chat(request)?
        };
        self.cache_write(
            &key,
            &CachedChat {
                request: request.clone(),
                response: response.clone(),
            },
        )?;
        Ok(response)
    }

    /// Embed texts, one vector per input in input order. Inputs are sent in
    /// batches; every vector must share one dimension.
    pub fn embed_texts(
        &self,
        texts: &[String],
        model: &str,
    ) -> Result<Vec<Vec<f32>>, GatewayError> {
        if texts.is_empty() || texts.iter().any(String::is_empty) {
            return Err(GatewayError::EmptyInput);
        }
        let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.embed_batch_size) {
            let key = cache_key_embed(batch, model);
            let got = match self.cache_read::<CachedEmbedding>(&key) {
                Some(hit) => hit.vectors,
                None => {
                    let fresh = {
                        let _permit = self.gate.acquire();
                        self.transport.embed(batch, model)?
                    };
                    self.cache_write(
                        &key,
                        &CachedEmbedding {
                            model: model.to_string(),
                            input: batch.to_vec(),
                            vectors: fresh.clone(),
                        },
                    )?;
                    fresh
                }
            };
            if got.len() != batch.len() {
                return Err(GatewayError::CardinalityMismatch {
                    sent: batch.len(),
                    got: got.len(),
                });
            }
            vectors.extend(got);
        }
        let dim = vectors[0].len();
        for v in &vectors {
            if v.len() != dim {
                return Err(GatewayError::DimensionMismatch(dim, v.len()));
            }
        }
        Ok(vectors)
    }
}
