use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Server settings, read from a TOML file. Every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Each session is persisted to `<session_root>/<id>`.
    pub session_root: PathBuf,
    /// Simulation rate of the real-time channel.
    pub tick_hz: f64,
    /// Frames buffered per stream before display frames are dropped.
    pub stream_buffer: usize,
    pub llm: LlmSettings,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            session_root: PathBuf::from("sessions"),
            tick_hz: 25.0,
            stream_buffer: 64,
            llm: LlmSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmBackendKind {
    /// Recorded responses only; misses are errors.
    Replay,
    /// OpenAI-compatible chat completions endpoint.
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub backend: LlmBackendKind,
    /// Replay file or directory of replay files.
    pub replay: Option<PathBuf>,
    pub url: Option<String>,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub temperature: Option<f64>,
    pub timeout_secs: u64,
    pub max_retries: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            backend: LlmBackendKind::Replay,
            replay: None,
            url: None,
            model: "default".into(),
            api_key_env: "STRUCTPOLICY_LLM_API_KEY".into(),
            temperature: None,
            timeout_secs: 600,
            max_retries: 2,
        }
    }
}

pub const ENV_URL: &str = "STRUCTPOLICY_LLM_URL";
pub const ENV_MODEL: &str = "STRUCTPOLICY_LLM_MODEL";

impl ServiceConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(toml::from_str(&text)?)
    }

    /// `STRUCTPOLICY_LLM_URL` and `STRUCTPOLICY_LLM_MODEL` override the file.
    pub fn with_env(mut self) -> Self {
        if let Ok(url) = std::env::var(ENV_URL) {
            self.llm.url = Some(url);
        }
        if let Ok(model) = std::env::var(ENV_MODEL) {
            self.llm.model = model;
        }
        self
    }
}
