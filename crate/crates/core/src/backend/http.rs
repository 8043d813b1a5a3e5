use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::limit::ConcurrencyLimit;
use super::{BackendConfig, BackendError, ChatBackend, ChatRequest, RetryPolicy};

/// Longest server-provided `Retry-After` we are willing to honor.
const MAX_RETRY_AFTER_MS: u64 = 60_000;

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: [WireMessage<'a>; 1],
    temperature: f64,
}

#[derive(Deserialize)]
struct WireReply {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReplyMessage,
}

#[derive(Deserialize)]
struct WireReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Failure {
    /// Worth retrying.
    Retry {
        message: String,
        retry_after_ms: Option<u64>,
        rate_limited: bool,
    },
    Fatal(String),
}

/// Chat-completion client: POSTs `{model, messages, temperature}` and returns
/// the first choice's message content.
pub struct HttpBackend {
    agent: ureq::Agent,
    endpoint: String,
    token: Option<String>,
    retry: RetryPolicy,
    limit: ConcurrencyLimit,
}

impl HttpBackend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, BackendError> {
        config.validate()?;
        let endpoint = config.endpoint.clone().ok_or_else(|| BackendError::Config("missing endpoint".into()))?;
        let token = std::env::var(&config.token_env).ok().filter(|t| !t.is_empty());
        Ok(Self::new(endpoint, token, config.retry, config.max_concurrency, Duration::from_secs(config.timeout_secs)))
    }

    pub fn new(
        endpoint: impl Into<String>,
        token: Option<String>,
        retry: RetryPolicy,
        max_concurrency: usize,
        timeout: Duration,
    ) -> Self {
        let agent: ureq::Agent =
            ureq::Agent::config_builder().http_status_as_error(false).timeout_global(Some(timeout)).build().into();
        HttpBackend { agent, endpoint: endpoint.into(), token, retry, limit: ConcurrencyLimit::new(max_concurrency) }
    }

    fn attempt(&self, request: &ChatRequest) -> Result<String, Failure> {
        let body = WireRequest {
            model: &request.params.model_id,
            messages: [WireMessage { role: "user", content: &request.prompt }],
            temperature: request.params.temperature,
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            call = call.header("Authorization", format!("Bearer {token}"));
        }
        let mut response = call.send_json(&body).map_err(|e| Failure::Retry {
            message: e.to_string(),
            retry_after_ms: None,
            rate_limited: false,
        })?;

        let status = response.status().as_u16();
        if status == 429 || status >= 500 {
            let retry_after_ms = response
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .map(|secs| ((secs * 1000.0) as u64).min(MAX_RETRY_AFTER_MS));
            return Err(Failure::Retry {
                message: format!("HTTP {status}"),
                retry_after_ms,
                rate_limited: status == 429,
            });
        }
        if !(200..300).contains(&status) {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(format!("HTTP {status}: {}", text.chars().take(500).collect::<String>())));
        }
        let reply: WireReply =
            response.body_mut().read_json().map_err(|e| Failure::Fatal(format!("unexpected response body: {e}")))?;
        reply
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Failure::Fatal("response has no choices[0].message.content".into()))
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let _permit = self.limit.acquire();
        let mut attempt = 1;
        loop {
            match self.attempt(request) {
                Ok(reply) => return Ok(reply),
                Err(Failure::Fatal(message)) => return Err(BackendError::Transport { attempts: attempt, message }),
                Err(Failure::Retry { message, retry_after_ms, rate_limited }) => {
                    if attempt >= self.retry.max_attempts {
                        return Err(if rate_limited {
                            BackendError::RateLimited { retry_after_ms }
                        } else {
                            BackendError::Transport { attempts: attempt, message }
                        });
                    }
                    let wait = retry_after_ms.unwrap_or_else(|| self.retry.backoff_ms(attempt));
                    log::debug!("{message}; retry {attempt} in {wait} ms");
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
            }
        }
    }
}
