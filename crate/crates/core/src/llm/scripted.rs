use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use super::{LlmBackend, LlmError, LlmRequest, RequestTag};

/// Deterministic backend that answers from a script keyed by request tag.
///
/// Script files are JSON objects mapping `"<template>/<trial>"` or
/// `"<template>/<trial>/<candidate>"` to completion text. A candidate
/// request falls back to the trial-level key when no candidate key exists.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    entries: BTreeMap<String, String>,
    calls: Mutex<Vec<RequestTag>>,
}

impl ScriptedBackend {
    pub fn new(entries: BTreeMap<String, String>) -> Self {
        Self {
            entries,
            calls: Mutex::new(Vec::new()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LlmError> {
        let entries: BTreeMap<String, String> =
            serde_json::from_str(text).map_err(|e| LlmError::Script(e.to_string()))?;
        Ok(Self::new(entries))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Script(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn insert(&mut self, key: impl Into<String>, text: impl Into<String>) {
        self.entries.insert(key.into(), text.into());
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Tags of every request served or refused, in arrival order.
    pub fn calls(&self) -> Vec<RequestTag> {
        self.calls.lock().expect("call log poisoned").clone()
    }

    fn lookup(&self, tag: &RequestTag) -> Option<&String> {
        self.entries.get(&tag.key()).or_else(|| {
            tag.candidate?;
            self.entries.get(&RequestTag::new(tag.template.clone(), tag.trial, None).key())
        })
    }
}

impl LlmBackend for ScriptedBackend {
    fn name(&self) -> &str {
        "scripted"
    }

    fn send(&self, request: &LlmRequest) -> Result<String, LlmError> {
        self.calls
            .lock()
            .expect("call log poisoned")
            .push(request.tag.clone());
        self.lookup(&request.tag)
            .cloned()
            .ok_or_else(|| LlmError::ScriptExhausted {
                key: request.tag.key(),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{complete, ChatMessage, DEFAULT_MODEL};

    fn req(template: &str, trial: usize, candidate: Option<usize>) -> LlmRequest {
        LlmRequest {
            tag: RequestTag::new(template, trial, candidate),
            messages: vec![ChatMessage::user("prompt")],
            temperature: 0.0,
            model_id: DEFAULT_MODEL.into(),
            max_output: 100,
        }
    }

    #[test]
    fn lookup_and_exhaustion() {
        let backend = ScriptedBackend::from_json(
            r#"{"generate/0": "first", "generate/1/2": "specific", "generate/1": "shared"}"#,
        )
        .unwrap();
        for _ in 0..3 {
            assert_eq!(complete(&backend, &req("generate", 0, None)).unwrap(), "first");
        }
        assert_eq!(complete(&backend, &req("generate", 1, Some(2))).unwrap(), "specific");
        assert_eq!(complete(&backend, &req("generate", 1, Some(0))).unwrap(), "shared");
        let err = complete(&backend, &req("generate", 5, None)).unwrap_err();
        assert!(matches!(err, LlmError::ScriptExhausted { ref key } if key == "generate/5"));
        assert!(err.to_string().contains("script exhausted"));
        assert_eq!(backend.calls().len(), 6);
    }

    #[test]
    fn malformed_script() {
        assert!(matches!(ScriptedBackend::from_json("[1, 2]"), Err(LlmError::Script(_))));
        assert!(matches!(ScriptedBackend::load("/no/such/script.json"), Err(LlmError::Script(_))));
    }
}
