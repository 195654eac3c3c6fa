use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};
use structpolicy::restructure::{BackendError, LlmBackend, LlmRequest, ReplayBackend};

use crate::config::{LlmBackendKind, LlmSettings};

/// Chat-completions client. Accepts the OpenAI `choices[0].message.content`
/// shape and the Anthropic `content[0].text` shape.
pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(url: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { client, url: url.into(), api_key })
    }
}

pub fn response_text(body: &Value) -> Result<String, BackendError> {
    body.pointer("/choices/0/message/content")
        .or_else(|| body.pointer("/content/0/text"))
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| BackendError::Payload(format!("no completion text in {}", truncate(&body.to_string(), 200))))
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let mut payload = json!({ "model": request.model, "messages": request.messages });
        if let Some(t) = request.temperature {
            payload["temperature"] = json!(t);
        }
        let mut req = self.client.post(&self.url).json(&payload);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let body: Value = resp.json().map_err(|e| BackendError::Payload(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Transport(format!("{status}: {}", truncate(&body.to_string(), 200))));
        }
        response_text(&body)
    }

    fn name(&self) -> &str {
        "http"
    }
}

pub fn backend_from_settings(s: &LlmSettings) -> Result<Arc<dyn LlmBackend>, BackendError> {
    match s.backend {
        LlmBackendKind::Replay => Ok(Arc::new(match &s.replay {
            Some(path) => ReplayBackend::load(path)?,
            None => ReplayBackend::default(),
        })),
        LlmBackendKind::Http => {
            let url = s.url.clone().ok_or_else(|| BackendError::Config("llm.url is not set".into()))?;
            let key = std::env::var(&s.api_key_env).ok();
            Ok(Arc::new(HttpBackend::new(url, key, Duration::from_secs(s.timeout_secs))?))
        }
    }
}
