//! Chat-completion client for OpenAI-compatible endpoints.
//!
//! Request: `POST {base_url}/chat/completions` with
//! `{"model": ..., "messages": [{"role": ..., "content": ...}], "temperature": 0}`.
//! Response: `choices[0].message.content` and, when present, `usage.prompt_tokens`
//! and `usage.completion_tokens`.

use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{BackendReply, CompletionRequest, LlmBackend, LlmError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_timeout_s() -> u64 {
    120
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::Client,
}

impl HttpBackend {
    /// Reads the API key from the configured environment variable, if any.
    pub fn new(config: HttpBackendConfig) -> Result<Self, LlmError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| LlmError::Auth(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(config.timeout_s))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            config,
            api_key,
            client,
        })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

enum Attempt {
    Done(BackendReply),
    Retry(LlmError),
    Fatal(LlmError),
}

impl HttpBackend {
    async fn attempt(&self, body: &Value) -> Attempt {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(LlmError::Transport(e.to_string())),
        };
        let status = resp.status();
        if status == StatusCode::TOO_MANY_REQUESTS {
            return Attempt::Retry(LlmError::RateLimit { retries: 0 });
        }
        if status == StatusCode::UNAUTHORIZED || status == StatusCode::FORBIDDEN {
            let text = resp.text().await.unwrap_or_default();
            return Attempt::Fatal(LlmError::Auth(format!("{status}: {text}")));
        }
        if status.is_server_error() {
            return Attempt::Retry(LlmError::Transport(format!("server returned {status}")));
        }
        if !status.is_success() {
            let text = resp.text().await.unwrap_or_default();
            return Attempt::Fatal(LlmError::Transport(format!("{status}: {text}")));
        }
        let payload: Value = match resp.json().await {
            Ok(v) => v,
            Err(e) => return Attempt::Fatal(LlmError::BadResponse(e.to_string())),
        };
        let Some(text) = payload
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
        else {
            return Attempt::Fatal(LlmError::BadResponse("missing choices[0].message.content".into()));
        };
        Attempt::Done(BackendReply {
            text: text.to_string(),
            prompt_tokens: payload.pointer("/usage/prompt_tokens").and_then(Value::as_u64),
            completion_tokens: payload.pointer("/usage/completion_tokens").and_then(Value::as_u64),
            retry_count: 0,
        })
    }
}

#[async_trait]
impl LlmBackend for HttpBackend {
    async fn complete(&self, request: CompletionRequest<'_>) -> Result<BackendReply, LlmError> {
        let body = json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": 0,
        });
        let mut retries = 0;
        loop {
            match self.attempt(&body).await {
                Attempt::Done(mut reply) => {
                    reply.retry_count = retries;
                    return Ok(reply);
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    if retries >= self.config.max_retries {
                        return Err(match e {
                            LlmError::RateLimit { .. } => LlmError::RateLimit { retries },
                            other => other,
                        });
                    }
                    retries += 1;
                    let wait = self.config.backoff_ms.saturating_mul(1 << (retries - 1).min(6));
                    tracing::warn!(error = %e, retries, "retrying chat completion");
                    tokio::time::sleep(Duration::from_millis(wait)).await;
                }
            }
        }
    }
}
