use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

/// Segment headers in assembly order.
pub const SEGMENTS: [&str; 6] = ["Role", "Context", "Rules", "Workflow", "Output Format", "Example"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("no value for slot `{{{0}}}`")]
    MissingSlot(String),
    #[error("template is missing the [{0}] segment")]
    MissingSegment(&'static str),
    #[error("segment [{0}] appears twice")]
    DuplicateSegment(String),
    #[error("segment [{0}] must not be empty")]
    EmptySegment(&'static str),
    #[error("the [Workflow] segment needs at least one `if` intent branch")]
    NoIntentBranch,
}

/// The six-part system prompt used by every chain step.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PromptPreamble {
    pub role: String,
    pub context: String,
    pub rules: String,
    pub workflow: String,
    pub output_format: String,
    pub example: String,
}

impl PromptPreamble {
    pub fn segments(&self) -> [(&'static str, &str); 6] {
        [
            (SEGMENTS[0], &self.role),
            (SEGMENTS[1], &self.context),
            (SEGMENTS[2], &self.rules),
            (SEGMENTS[3], &self.workflow),
            (SEGMENTS[4], &self.output_format),
            (SEGMENTS[5], &self.example),
        ]
    }

    /// Parse a template file: lines `[Role]`, `[Context]`, ... start the
    /// segments; anything before the first header is a comment.
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        let mut found: BTreeMap<&'static str, Vec<&str>> = BTreeMap::new();
        let mut current: Option<&'static str> = None;
        for line in text.lines() {
            let t = line.trim();
            if let Some(name) = t.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                if let Some(seg) = SEGMENTS.iter().find(|s| **s == name) {
                    if found.contains_key(seg) {
                        return Err(PromptError::DuplicateSegment(name.to_string()));
                    }
                    found.insert(seg, Vec::new());
                    current = Some(seg);
                    continue;
                }
            }
            if let Some(seg) = current {
                found.get_mut(seg).expect("inserted").push(line);
            }
        }
        let mut take = |seg: &'static str| -> Result<String, PromptError> {
            let lines = found.remove(seg).ok_or(PromptError::MissingSegment(seg))?;
            Ok(lines.join("\n").trim().to_string())
        };
        let p = PromptPreamble {
            role: take(SEGMENTS[0])?,
            context: take(SEGMENTS[1])?,
            rules: take(SEGMENTS[2])?,
            workflow: take(SEGMENTS[3])?,
            output_format: take(SEGMENTS[4])?,
            example: take(SEGMENTS[5])?,
        };
        Ok(p)
    }

    /// Check that every segment but the example is non-empty and, for
    /// intent-routing steps, that the workflow branches on intent.
    pub fn validate(&self, routes_intent: bool) -> Result<(), PromptError> {
        for (name, body) in self.segments().into_iter().take(5) {
            if body.trim().is_empty() {
                return Err(PromptError::EmptySegment(name));
            }
        }
        if routes_intent && !has_if_branch(&self.workflow) {
            return Err(PromptError::NoIntentBranch);
        }
        Ok(())
    }

    /// Names of all `{slot}` markers, in sorted order.
    pub fn slots(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for (_, body) in self.segments() {
            for piece in scan(body) {
                if let Piece::Slot(name) = piece {
                    out.insert(name.to_string());
                }
            }
        }
        out
    }
}

fn has_if_branch(workflow: &str) -> bool {
    workflow.lines().any(|l| {
        let t = l.trim_start().to_ascii_lowercase();
        t.starts_with("if ") || t.starts_with("else if ")
    })
}

enum Piece<'a> {
    Text(&'a str),
    Slot(&'a str),
}

/// Split text into literal runs and `{slot}` markers. Only lowercase
/// identifiers count as slots, so braces in Mermaid examples stay literal.
fn scan(text: &str) -> Vec<Piece<'_>> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let ident_len = after
            .find(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'))
            .unwrap_or(after.len());
        let is_slot = ident_len > 0
            && after[..1].chars().all(|c| c.is_ascii_lowercase() || c == '_')
            && after[ident_len..].starts_with('}');
        if is_slot {
            out.push(Piece::Text(&rest[..open]));
            out.push(Piece::Slot(&after[..ident_len]));
            rest = &after[ident_len + 1..];
        } else {
            out.push(Piece::Text(&rest[..open + 1]));
            rest = after;
        }
    }
    out.push(Piece::Text(rest));
    out
}

fn substitute(text: &str, slots: &BTreeMap<String, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(text.len());
    for piece in scan(text) {
        match piece {
            Piece::Text(t) => out.push_str(t),
            Piece::Slot(name) => out.push_str(
                slots
                    .get(name)
                    .ok_or_else(|| PromptError::MissingSlot(name.to_string()))?,
            ),
        }
    }
    Ok(out)
}

/// Join the six segments in order, each under its `[Header]`, filling every
/// `{slot}` in a single pass. Slot values are inserted verbatim and never
/// scanned for further markers.
pub fn assemble_prompt(
    preamble: &PromptPreamble,
    slots: &BTreeMap<String, String>,
) -> Result<String, PromptError> {
    let mut parts = Vec::with_capacity(6);
    for (name, body) in preamble.segments() {
        parts.push(format!("[{name}]\n{}", substitute(body, slots)?));
    }
    Ok(parts.join("\n\n"))
}
