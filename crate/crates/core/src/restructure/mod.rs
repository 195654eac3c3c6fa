//! Turns user instructions into a compiled structured policy by prompting a
//! language model, with bounded retries that feed diagnostics back.

mod backend;
mod prompt;
mod response;

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::pgdl::{compile_source, format_diagnostics, CompiledPolicy, Diagnostic};
use crate::sim::ObservationSchema;

pub use backend::{
    BackendError, LlmBackend, LlmRequest, RecordingBackend, ReplayBackend, ReplayEntry, ReplayFile,
    ScriptedBackend,
};
pub use prompt::{build_prompt, exemplar_answer, instruction_list, messages_hash, Message, PromptBundle, Role, NO_INSTRUCTIONS};
pub use response::{parse_response, ParsedResponse, ResponseError, SECTIONS};

/// Canned replay recordings used by tests and the offline demo.
pub mod fixtures {
    macro_rules! llm {
        ($name:literal) => {
            include_str!(concat!("../../fixtures/llm/", $name, ".json"))
        };
    }

    pub const STAY_ON_ROAD: &str = llm!("stay_on_road");
    pub const SHAPE_ERROR_THEN_VALID: &str = llm!("shape_error_then_valid");
    pub const SLOW_IN_CORNERS: &str = llm!("slow_in_corners");
    pub const NO_INSTRUCTIONS: &str = llm!("no_instructions");

    /// One recording per instruction style: terse abstract, terse specific,
    /// verbose, second person, third person, typo.
    pub const STYLES: [(&str, &str); 6] = [
        ("terse_abstract", llm!("style_terse_abstract")),
        ("terse_specific", llm!("style_terse_specific")),
        ("verbose", llm!("style_verbose")),
        ("second_person", llm!("style_second_person")),
        ("third_person", llm!("style_third_person")),
        ("typo", llm!("style_typo")),
    ];

    pub const ALL: [&str; 10] = [
        STAY_ON_ROAD,
        SHAPE_ERROR_THEN_VALID,
        SLOW_IN_CORNERS,
        NO_INSTRUCTIONS,
        STYLES[0].1,
        STYLES[1].1,
        STYLES[2].1,
        STYLES[3].1,
        STYLES[4].1,
        STYLES[5].1,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub id: String,
    pub text: String,
    pub used: bool,
    /// Unix seconds.
    pub created_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSet {
    pub items: Vec<Instruction>,
    /// Counter behind generated ids; never reused after removal.
    #[serde(default)]
    pub next_id: u64,
}

impl InstructionSet {
    pub fn add(&mut self, text: impl Into<String>, created_at: u64) -> String {
        self.next_id += 1;
        let id = format!("i{}", self.next_id);
        self.items.push(Instruction { id: id.clone(), text: text.into(), used: true, created_at });
        id
    }

    pub fn remove(&mut self, id: &str) -> Option<Instruction> {
        let pos = self.items.iter().position(|i| i.id == id)?;
        Some(self.items.remove(pos))
    }

    pub fn set_used(&mut self, id: &str, used: bool) -> bool {
        match self.items.iter_mut().find(|i| i.id == id) {
            Some(i) => {
                i.used = used;
                true
            }
            None => false,
        }
    }

    pub fn get(&self, id: &str) -> Option<&Instruction> {
        self.items.iter().find(|i| i.id == id)
    }

    pub fn active(&self) -> impl Iterator<Item = &Instruction> {
        self.items.iter().filter(|i| i.used)
    }

    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut s = Self::default();
        for t in texts {
            s.add(t.as_ref(), 0);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestructureConfig {
    pub model: String,
    pub temperature: Option<f64>,
    /// Extra attempts after the first.
    pub max_retries: usize,
    /// USD per million input and output tokens, for the cost estimate.
    pub price_in: f64,
    pub price_out: f64,
}

impl Default for RestructureConfig {
    fn default() -> Self {
        Self { model: "default".into(), temperature: None, max_retries: 2, price_in: 0.0, price_out: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmTranscript {
    pub attempt: usize,
    pub model: String,
    pub backend: String,
    pub bundle_hash: String,
    pub request_hash: String,
    pub temperature: Option<f64>,
    pub messages: Vec<Message>,
    pub response: String,
    pub error: Option<String>,
    pub latency_ms: u64,
    pub cost_estimate: f64,
    /// Unix milliseconds.
    pub timestamp: u64,
}

impl LlmTranscript {
    pub fn save(&self, dir: &Path) -> std::io::Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}-attempt{}.json", &self.request_hash[..12], self.attempt));
        std::fs::write(&path, serde_json::to_string_pretty(self)?)?;
        Ok(path)
    }
}

#[derive(Debug, Clone)]
pub struct RestructureOutcome {
    pub compiled: CompiledPolicy,
    pub parsed: ParsedResponse,
    /// Structure description prose shown to the user.
    pub summary: String,
    pub warnings: Vec<Diagnostic>,
    pub transcripts: Vec<LlmTranscript>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("no valid policy after {} attempts: {}", .transcripts.len(), .errors.last().map(String::as_str).unwrap_or(""))]
pub struct RestructureFailure {
    pub transcripts: Vec<LlmTranscript>,
    /// One entry per attempt.
    pub errors: Vec<String>,
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

fn feedback(errors: &str) -> String {
    format!(
        "The previous answer could not be used:\n{errors}\nReply again in the same four-section layout with a corrected program."
    )
}

fn attempt_errors(text: &str, schema: &ObservationSchema) -> Result<(ParsedResponse, CompiledPolicy, Vec<Diagnostic>), String> {
    if text.trim().is_empty() {
        return Err("the response was empty".into());
    }
    let parsed = parse_response(text).map_err(|e| e.to_string())?;
    match compile_source(&parsed.pgdl, schema) {
        Ok((c, w)) => Ok((parsed, c, w)),
        Err(d) => Err(format_diagnostics(&d)),
    }
}

pub fn restructure(
    instructions: &InstructionSet,
    backend: &dyn LlmBackend,
    config: &RestructureConfig,
) -> Result<RestructureOutcome, RestructureFailure> {
    let bundle = build_prompt(instructions);
    let bundle_hash = bundle.hash();
    let schema = ObservationSchema::racing();
    let mut messages = bundle.messages();
    let mut transcripts = Vec::new();
    let mut errors = Vec::new();
    for attempt in 0..=config.max_retries {
        let request = LlmRequest { model: config.model.clone(), temperature: config.temperature, messages: messages.clone() };
        let started = Instant::now();
        let reply = backend.complete(&request);
        let latency_ms = started.elapsed().as_millis() as u64;
        let (response, backend_error) = match reply {
            Ok(r) => (r, None),
            Err(e) => (String::new(), Some(e.to_string())),
        };
        let chars_in: usize = messages.iter().map(|m| m.content.len()).sum();
        let cost_estimate =
            (chars_in as f64 / 4.0 * config.price_in + response.len() as f64 / 4.0 * config.price_out) / 1e6;
        let result = match &backend_error {
            Some(e) => Err(e.clone()),
            None => attempt_errors(&response, &schema),
        };
        transcripts.push(LlmTranscript {
            attempt,
            model: config.model.clone(),
            backend: backend.name().to_string(),
            bundle_hash: bundle_hash.clone(),
            request_hash: request.hash(),
            temperature: config.temperature,
            messages: messages.clone(),
            response: response.clone(),
            error: result.as_ref().err().cloned(),
            latency_ms,
            cost_estimate,
            timestamp: now_ms(),
        });
        match result {
            Ok((parsed, compiled, warnings)) => {
                let summary = parsed.structure_description.clone();
                return Ok(RestructureOutcome { compiled, parsed, summary, warnings, transcripts });
            }
            Err(e) => {
                messages.push(Message::new(Role::Assistant, response));
                messages.push(Message::new(Role::User, feedback(&e)));
                errors.push(e);
            }
        }
    }
    Err(RestructureFailure { transcripts, errors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_replies_exhaust_the_budget() {
        let b = ScriptedBackend::new(["", "", ""]);
        let f = restructure(&InstructionSet::default(), &b, &RestructureConfig::default()).unwrap_err();
        assert_eq!(f.transcripts.len(), 3);
        assert_eq!(f.errors.len(), 3);
        assert_eq!(f.transcripts[2].messages.len(), 8);
    }

    #[test]
    fn instruction_ids_are_unique_after_removal() {
        let mut s = InstructionSet::default();
        let a = s.add("a", 0);
        s.remove(&a);
        let b = s.add("b", 0);
        assert_ne!(a, b);
    }
}
