//! Backend-agnostic chat completion.
//!
//! Every request carries a [`RequestTag`] naming the prompt template, the
//! trial and (for letter generation) the candidate it belongs to. Live
//! backends ignore the tag; the scripted backend uses it as its lookup key.

mod http;
mod parse;
mod scripted;
mod template;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{ChatCompletionsBackend, HttpBackendConfig, RetryPolicy, DEFAULT_API_KEY_ENV, DEFAULT_ENDPOINT};
pub use parse::{format_generation, parse_code_list, parse_generation, ParseError, ParsedGeneration, DELIMITER};
pub use scripted::ScriptedBackend;
pub use template::{PromptSet, PromptTemplate, TemplateError};

pub const DEFAULT_MODEL: &str = "gpt-4o-2024-05-13";

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script exhausted: no entry for '{key}'")]
    ScriptExhausted { key: String },
    #[error("cannot load script: {0}")]
    Script(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("empty completion")]
    EmptyCompletion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
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
}

/// Which template, trial and candidate a request belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RequestTag {
    pub template: String,
    pub trial: usize,
    pub candidate: Option<usize>,
}

impl RequestTag {
    pub fn new(template: impl Into<String>, trial: usize, candidate: Option<usize>) -> Self {
        Self {
            template: template.into(),
            trial,
            candidate,
        }
    }

    /// Script key: `template/trial` or `template/trial/candidate`.
    pub fn key(&self) -> String {
        match self.candidate {
            Some(c) => format!("{}/{}/{}", self.template, self.trial, c),
            None => format!("{}/{}", self.template, self.trial),
        }
    }
}

impl fmt::Display for RequestTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub tag: RequestTag,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub model_id: String,
    pub max_output: u32,
}

impl LlmRequest {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if let Some(m) = self
            .messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(LlmError::InvalidRequest(format!("empty {:?} message", m.role)));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if self.model_id.trim().is_empty() {
            return Err(LlmError::InvalidRequest("empty model id".into()));
        }
        Ok(())
    }

    /// Concatenated user-message content, as recorded in audit trails.
    pub fn user_prompt(&self) -> String {
        self.messages
            .iter()
            .filter(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

/// A chat-completion provider. Implementations must tolerate concurrent calls.
pub trait LlmBackend: Send + Sync {
    fn name(&self) -> &str;

    fn send(&self, request: &LlmRequest) -> Result<String, LlmError>;
}

/// Validates the request, calls the backend and rejects blank completions.
pub fn complete(backend: &dyn LlmBackend, request: &LlmRequest) -> Result<String, LlmError> {
    request.validate()?;
    let text = backend.send(request)?;
    if text.trim().is_empty() {
        return Err(LlmError::EmptyCompletion);
    }
    tracing::debug!(backend = backend.name(), tag = %request.tag, "completion received");
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Echo(&'static str);

    impl LlmBackend for Echo {
        fn name(&self) -> &str {
            "echo"
        }

        fn send(&self, _request: &LlmRequest) -> Result<String, LlmError> {
            Ok(self.0.to_string())
        }
    }

    fn request(temperature: f64, content: &str) -> LlmRequest {
        LlmRequest {
            tag: RequestTag::new("t", 0, None),
            messages: vec![ChatMessage::system("sys"), ChatMessage::user(content)],
            temperature,
            model_id: DEFAULT_MODEL.into(),
            max_output: 64,
        }
    }

    #[test]
    fn tag_keys() {
        assert_eq!(RequestTag::new("extract_codes", 0, None).key(), "extract_codes/0");
        assert_eq!(RequestTag::new("generate_letter", 2, Some(4)).key(), "generate_letter/2/4");
    }

    #[test]
    fn complete_validates_and_rejects_blank() {
        assert!(complete(&Echo("hi"), &request(0.0, "x")).is_ok());
        assert!(matches!(
            complete(&Echo("hi"), &request(-1.0, "x")),
            Err(LlmError::InvalidRequest(_))
        ));
        assert!(matches!(
            complete(&Echo("hi"), &request(0.0, "  ")),
            Err(LlmError::InvalidRequest(_))
        ));
        assert!(matches!(
            complete(&Echo(" \n"), &request(0.0, "x")),
            Err(LlmError::EmptyCompletion)
        ));
    }
}
