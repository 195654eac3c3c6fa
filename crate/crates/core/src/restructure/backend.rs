use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::prompt::{messages_hash, Message};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model: String,
    pub temperature: Option<f64>,
    pub messages: Vec<Message>,
}

impl LlmRequest {
    /// Replay key: depends on the messages only.
    pub fn hash(&self) -> String {
        messages_hash(&self.messages)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
pub enum BackendError {
    #[error("no recorded response for request {0}")]
    ReplayMiss(String),
    #[error("backend request failed: {0}")]
    Transport(String),
    #[error("backend returned an unexpected payload: {0}")]
    Payload(String),
    #[error("backend is not configured: {0}")]
    Config(String),
}

/// Text in, text out.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError>;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub request_hash: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReplayFile {
    #[serde(default)]
    pub description: String,
    /// Instruction texts the recording was made for.
    #[serde(default)]
    pub instructions: Vec<String>,
    pub entries: Vec<ReplayEntry>,
}

/// Answers only requests it has a recording for. Never goes to the network.
#[derive(Debug, Clone, Default)]
pub struct ReplayBackend {
    entries: HashMap<String, String>,
}

impl ReplayBackend {
    pub fn new(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        Self { entries: entries.into_iter().map(|e| (e.request_hash, e.response)).collect() }
    }

    pub fn from_json(text: &str) -> Result<Self, BackendError> {
        let f: ReplayFile = serde_json::from_str(text).map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self::new(f.entries))
    }

    /// Loads one replay file, or every `*.json` file in a directory.
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| BackendError::Config(format!("{}: {e}", p.display())));
        if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)
                .map_err(|e| BackendError::Config(e.to_string()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            let mut all = Self::default();
            for f in files {
                all.entries.extend(Self::from_json(&read(&f)?)?.entries);
            }
            Ok(all)
        } else {
            Self::from_json(&read(path)?)
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl LlmBackend for ReplayBackend {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let h = request.hash();
        self.entries.get(&h).cloned().ok_or(BackendError::ReplayMiss(h))
    }

    fn name(&self) -> &str {
        "replay"
    }
}

/// Hands out queued responses in order regardless of the request.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    queue: Mutex<VecDeque<String>>,
}

impl ScriptedBackend {
    pub fn new(responses: impl IntoIterator<Item = impl Into<String>>) -> Self {
        Self { queue: Mutex::new(responses.into_iter().map(Into::into).collect()) }
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, _request: &LlmRequest) -> Result<String, BackendError> {
        self.queue
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| BackendError::Transport("scripted responses exhausted".into()))
    }

    fn name(&self) -> &str {
        "scripted"
    }
}

/// Wraps a backend and keeps every request hash with its response, so a live
/// session can be turned into a replay file.
pub struct RecordingBackend<B> {
    pub inner: B,
    log: Mutex<Vec<ReplayEntry>>,
}

impl<B: LlmBackend> RecordingBackend<B> {
    pub fn new(inner: B) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn recorded(&self, description: impl Into<String>, instructions: Vec<String>) -> ReplayFile {
        ReplayFile { description: description.into(), instructions, entries: self.log.lock().unwrap().clone() }
    }
}

impl<B: LlmBackend> LlmBackend for RecordingBackend<B> {
    fn complete(&self, request: &LlmRequest) -> Result<String, BackendError> {
        let r = self.inner.complete(request)?;
        self.log.lock().unwrap().push(ReplayEntry { request_hash: request.hash(), response: r.clone() });
        Ok(r)
    }

    fn name(&self) -> &str {
        self.inner.name()
    }
}
