use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::InstructionSet;
use crate::pgdl::fixtures;
use crate::sim::ObservationSchema;

const SYSTEM: &str = include_str!("../../prompts/system.txt");
const LANDER_INSTRUCTIONS: &str = include_str!("../../prompts/lander_instructions.txt");
const LANDER_PROSE: &str = include_str!("../../prompts/lander_answer_prose.txt");
const TASK: &str = include_str!("../../prompts/task.txt");

/// Placed in the instruction list when no instruction is marked for use.
pub const NO_INSTRUCTIONS: &str = " * (no user instructions)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self { role, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system: String,
    pub exemplar_instructions: String,
    pub exemplar_answer: String,
    pub task: String,
}

impl PromptBundle {
    /// System, exemplar question, exemplar answer, task.
    pub fn messages(&self) -> Vec<Message> {
        vec![
            Message::new(Role::System, &self.system),
            Message::new(Role::User, &self.exemplar_instructions),
            Message::new(Role::Assistant, &self.exemplar_answer),
            Message::new(Role::User, &self.task),
        ]
    }

    pub fn hash(&self) -> String {
        messages_hash(&self.messages())
    }
}

/// SHA-256 over role-tagged, length-prefixed message contents.
pub fn messages_hash(messages: &[Message]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        h.update(role.as_bytes());
        h.update((m.content.len() as u64).to_le_bytes());
        h.update(m.content.as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn exemplar_answer() -> String {
    format!("{LANDER_PROSE}\n[Code]\n```pgdl\n{}```\n", fixtures::LANDER)
}

fn features_text(schema: &ObservationSchema) -> String {
    let mut out = String::new();
    for e in &schema.entries {
        // Per-element names are described once, after the vectors.
        if e.len.is_none() && e.indices.len() == 1 && e.name.rsplit_once('_').is_some_and(|(_, t)| t.parse::<usize>().is_ok()) {
            continue;
        }
        match e.len {
            Some(n) => out.push_str(&format!(" * {} [{n}]: {}\n", e.name, e.description)),
            None => out.push_str(&format!(" * {}: {}\n", e.name, e.description)),
        }
    }
    out.push_str(" * Single tile values are available as scalars named like tile_x_0 through tile_x_7.\n");
    out
}

fn actions_text(schema: &ObservationSchema) -> String {
    let mut out = String::new();
    for (name, (lo, hi)) in &schema.actions {
        out.push_str(&format!(" * {name} in [{lo}, {hi}]\n"));
    }
    out.push_str(" * steer is -1 for full left and 1 for full right.");
    out
}

/// Instruction bullets in insertion order, only those marked for use.
pub fn instruction_list(instructions: &InstructionSet) -> String {
    let lines: Vec<String> = instructions.active().map(|i| format!(" * {}", i.text.trim())).collect();
    if lines.is_empty() {
        NO_INSTRUCTIONS.to_string()
    } else {
        lines.join("\n")
    }
}

pub fn build_prompt(instructions: &InstructionSet) -> PromptBundle {
    let schema = ObservationSchema::racing();
    let task = TASK
        .replace("{{INSTRUCTIONS}}", &instruction_list(instructions))
        .replace("{{FEATURES}}", features_text(&schema).trim_end())
        .replace("{{ACTIONS}}", &actions_text(&schema));
    PromptBundle {
        system: SYSTEM.to_string(),
        exemplar_instructions: LANDER_INSTRUCTIONS.to_string(),
        exemplar_answer: exemplar_answer(),
        task,
    }
}
