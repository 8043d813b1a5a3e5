//! Chat-completion access.
//!
//! Every model call goes through [`ChatBackend::complete`]. Implementations:
//! [`ScriptedBackend`] (deterministic replies from a script file, for tests
//! and replays), `HttpBackend` (chat-completion wire protocol, behind the
//! `http` feature) and [`CachedBackend`], a content-addressed on-disk cache
//! that wraps either.

mod cache;
#[cfg(feature = "http")]
mod http;
mod limit;
mod scripted;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::types::{GenerationParams, JUDGMENT_TEMPERATURE};

pub use cache::{CacheStats, CachedBackend, ResponseCache};
#[cfg(feature = "http")]
pub use http::HttpBackend;
pub use limit::ConcurrencyLimit;
pub use scripted::{ScriptMatch, ScriptRule, ScriptedBackend};

/// Why a model call is made. Determines the default temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Generation,
    Classification,
    Sampling,
    Contradiction,
    Baseline,
    Topic,
}

impl Purpose {
    pub fn as_str(self) -> &'static str {
        match self {
            Purpose::Generation => "generation",
            Purpose::Classification => "classification",
            Purpose::Sampling => "sampling",
            Purpose::Contradiction => "contradiction",
            Purpose::Baseline => "baseline",
            Purpose::Topic => "topic",
        }
    }

    /// Generation and sampling run at the run temperature; judgment calls at 0.1.
    pub fn default_temperature(self, run_temperature: f64) -> f64 {
        match self {
            Purpose::Generation | Purpose::Sampling => run_temperature,
            _ => JUDGMENT_TEMPERATURE,
        }
    }
}

impl fmt::Display for Purpose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One model call.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub prompt: String,
    pub params: GenerationParams,
    pub purpose: Purpose,
    /// Claim the call is about. Used for script matching only; not part of the cache key.
    pub claim_id: Option<String>,
    /// Re-ask counter for replies that failed to parse. Zero for the first ask.
    pub attempt: u32,
}

impl ChatRequest {
    pub fn new(prompt: impl Into<String>, params: GenerationParams, purpose: Purpose) -> Self {
        ChatRequest { prompt: prompt.into(), params, purpose, claim_id: None, attempt: 0 }
    }

    pub fn for_claim(mut self, claim_id: impl Into<String>) -> Self {
        self.claim_id = Some(claim_id.into());
        self
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    pub fn key(&self) -> String {
        cache_key(self)
    }
}

/// Content digest identifying a request.
///
/// Covers model, temperature, template id, prompt text, sample index and
/// purpose, so independent samples of the same prompt get distinct keys. A
/// non-zero re-ask attempt is appended so a re-asked call is not answered from
/// the cache with the reply that failed to parse.
pub fn cache_key(request: &ChatRequest) -> String {
    let p = &request.params;
    let mut h = Sha256::new();
    let temperature = format!("{:?}", p.temperature);
    let sample_index = p.sample_index.to_string();
    let fields: [&str; 6] =
        [&p.model_id, &temperature, &p.prompt_template_id, &request.prompt, &sample_index, request.purpose.as_str()];
    for field in fields {
        h.update((field.len() as u64).to_le_bytes());
        h.update(field.as_bytes());
    }
    if request.attempt > 0 {
        h.update(b"attempt");
        h.update(request.attempt.to_le_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("rate limited (retry after {retry_after_ms:?} ms)")]
    RateLimited { retry_after_ms: Option<u64> },
    #[error("no script rule matches request {0}")]
    ScriptMiss(String),
    #[error("script file: {0}")]
    Script(String),
    #[error("cache {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("backend configuration: {0}")]
    Config(String),
}

/// The single model-access contract.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "http" => Ok(BackendKind::Http),
            "scripted" => Ok(BackendKind::Scripted),
            other => Err(format!("unknown backend `{other}` (expected http or scripted)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, base_backoff_ms: 500 }
    }
}

impl RetryPolicy {
    /// Exponential backoff before retry number `retry` (1-based).
    pub fn backoff_ms(&self, retry: u32) -> u64 {
        self.base_backoff_ms.saturating_mul(1u64 << (retry.saturating_sub(1)).min(16))
    }
}

pub const DEFAULT_TOKEN_ENV: &str = "AUTOHALL_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    pub model_id: String,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub script_path: Option<PathBuf>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_concurrency() -> usize {
    4
}

fn default_token_env() -> String {
    DEFAULT_TOKEN_ENV.to_string()
}

fn default_timeout() -> u64 {
    120
}

impl BackendConfig {
    pub fn scripted(model_id: impl Into<String>, script_path: impl Into<PathBuf>) -> Self {
        BackendConfig {
            kind: BackendKind::Scripted,
            endpoint: None,
            model_id: model_id.into(),
            max_concurrency: default_concurrency(),
            retry: RetryPolicy::default(),
            cache_dir: None,
            script_path: Some(script_path.into()),
            token_env: default_token_env(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn http(model_id: impl Into<String>, endpoint: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            script_path: None,
            ..BackendConfig::scripted(model_id, PathBuf::new())
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.max_concurrency == 0 {
            return Err(BackendError::Config("max_concurrency must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(BackendError::Config("retry.max_attempts must be at least 1".into()));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => {
                Err(BackendError::Config("http backend needs an endpoint".into()))
            }
            BackendKind::Scripted if self.script_path.is_none() => {
                Err(BackendError::Config("scripted backend needs a script path".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Build the configured backend, wrapped in the response cache when `cache_dir` is set.
pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn ChatBackend>, BackendError> {
    config.validate()?;
    let inner: Box<dyn ChatBackend> = match config.kind {
        BackendKind::Scripted => {
            let path = config.script_path.as_ref().expect("validated");
            Box::new(ScriptedBackend::from_file(path)?)
        }
        #[cfg(feature = "http")]
        BackendKind::Http => Box::new(HttpBackend::from_config(config)?),
        #[cfg(not(feature = "http"))]
        BackendKind::Http => {
            return Err(BackendError::Config("built without the `http` feature".into()));
        }
    };
    Ok(match &config.cache_dir {
        Some(dir) => Box::new(CachedBackend::new(inner, ResponseCache::open(dir)?)),
        None => inner,
    })
}
