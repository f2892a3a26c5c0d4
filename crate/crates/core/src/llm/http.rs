//! Chat-completions over HTTP (OpenAI-compatible wire format).

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, LlmBackend, LlmError, LlmRequest};

pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_API_KEY_ENV: &str = "OPENAI_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = 2u32.saturating_pow(attempt.saturating_sub(1));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry: RetryPolicy,
}

impl HttpBackendConfig {
    /// Default endpoint with the bearer token read from `api_key_env`.
    pub fn from_env(api_key_env: &str) -> Self {
        Self {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            api_key: std::env::var(api_key_env).ok().filter(|k| !k.is_empty()),
            timeout: Duration::from_secs(120),
            retry: RetryPolicy::default(),
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

fn is_retryable_status(status: u16) -> bool {
    matches!(status, 408 | 429 | 500 | 502 | 503 | 504)
}

pub struct ChatCompletionsBackend {
    client: reqwest::blocking::Client,
    config: HttpBackendConfig,
}

impl ChatCompletionsBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self { client, config })
    }

    fn attempt(&self, request: &LlmRequest) -> Result<String, Attempt> {
        let body = WireRequest {
            model: &request.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_output,
        };
        let mut builder = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| Attempt::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let text = response.text().map_err(|e| Attempt::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(Attempt::Status { status, body: text });
        }
        let parsed: WireResponse =
            serde_json::from_str(&text).map_err(|e| Attempt::Fatal(LlmError::Response(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Attempt::Fatal(LlmError::Response("no choices[0].message.content".into())))
    }
}

enum Attempt {
    Transport(String),
    Status { status: u16, body: String },
    Fatal(LlmError),
}

impl LlmBackend for ChatCompletionsBackend {
    fn name(&self) -> &str {
        "chat-completions"
    }

    fn send(&self, request: &LlmRequest) -> Result<String, LlmError> {
        let max_attempts = self.config.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            let err = match self.attempt(request) {
                Ok(text) => return Ok(text),
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Status { status, body }) if !is_retryable_status(status) => {
                    return Err(LlmError::Status { status, body })
                }
                Err(e) => e,
            };
            if attempt >= max_attempts {
                return Err(match err {
                    Attempt::Status { status, body } => LlmError::Status { status, body },
                    Attempt::Transport(message) => LlmError::Transport {
                        attempts: attempt,
                        message,
                    },
                    Attempt::Fatal(e) => e,
                });
            }
            let delay = self.config.retry.delay(attempt);
            tracing::warn!(tag = %request.tag, attempt, ?delay, "transient LLM failure, retrying");
            std::thread::sleep(delay);
            attempt += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(350),
        };
        assert_eq!(p.delay(1), Duration::from_millis(100));
        assert_eq!(p.delay(2), Duration::from_millis(200));
        assert_eq!(p.delay(3), Duration::from_millis(350));
    }

    #[test]
    fn retryable_statuses() {
        assert!(is_retryable_status(503));
        assert!(is_retryable_status(429));
        assert!(!is_retryable_status(400));
        assert!(!is_retryable_status(401));
    }
}
