use serde::{Deserialize, Serialize};

pub const SECTIONS: [&str; 4] = ["[Variables]", "[Structure Description]", "[Connections]", "[Code]"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedResponse {
    pub variables: String,
    pub structure_description: String,
    pub connections: String,
    pub pgdl: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum ResponseError {
    #[error("response is missing the {0} section")]
    MissingSection(String),
    #[error("the {0} section is empty")]
    EmptySection(String),
    #[error("expected one fenced code block, found {0}")]
    FenceCount(usize),
    #[error("code fence is not closed")]
    UnclosedFence,
}

/// Byte offset of a heading that starts a line.
fn heading(text: &str, name: &str) -> Option<usize> {
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim_start().starts_with(name) {
            return Some(offset + (line.len() - line.trim_start().len()));
        }
        offset += line.len();
    }
    None
}

/// Fenced blocks as `(body start, body end)` byte ranges.
fn fences(text: &str) -> Result<Vec<(usize, usize)>, ResponseError> {
    let mut blocks = Vec::new();
    let mut open: Option<usize> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if line.trim_start().starts_with("```") {
            match open.take() {
                Some(start) => blocks.push((start, offset)),
                None => open = Some(offset + line.len()),
            }
        }
        offset += line.len();
    }
    if open.is_some() {
        return Err(ResponseError::UnclosedFence);
    }
    Ok(blocks)
}

pub fn parse_response(text: &str) -> Result<ParsedResponse, ResponseError> {
    let mut at = Vec::new();
    for name in SECTIONS {
        let pos = heading(text, name).ok_or_else(|| ResponseError::MissingSection(name.to_string()))?;
        at.push(pos);
    }
    let body = |i: usize| -> String {
        let start = at[i] + SECTIONS[i].len();
        let end = at.iter().copied().filter(|&p| p > at[i]).min().unwrap_or(text.len());
        text[start..end].trim().to_string()
    };
    let blocks = fences(text)?;
    if blocks.len() != 1 {
        return Err(ResponseError::FenceCount(blocks.len()));
    }
    let (s, e) = blocks[0];
    if s < at[3] {
        return Err(ResponseError::EmptySection(SECTIONS[3].to_string()));
    }
    let parsed = ParsedResponse {
        variables: body(0),
        structure_description: body(1),
        connections: body(2),
        pgdl: text[s..e].to_string(),
    };
    for (name, v) in SECTIONS.iter().zip([
        &parsed.variables,
        &parsed.structure_description,
        &parsed.connections,
        &parsed.pgdl,
    ]) {
        if v.trim().is_empty() {
            return Err(ResponseError::EmptySection(name.to_string()));
        }
    }
    Ok(parsed)
}
