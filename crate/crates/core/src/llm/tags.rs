use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::requirements::RequirementList;
use crate::dsl::{parse_command, parse_program, RobotProgram};
use crate::flowchart::{parse_mermaid, valid_id, FlowGraph};

/// The closed tag vocabulary of model output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tag {
    Requirements,
    Code,
    Explanation,
    Flowchart,
    Question,
    Answer,
    ModifiedNodes,
}

impl Tag {
    pub const ALL: [Tag; 7] = [
        Tag::Requirements,
        Tag::Code,
        Tag::Explanation,
        Tag::Flowchart,
        Tag::Question,
        Tag::Answer,
        Tag::ModifiedNodes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::Requirements => "requirements",
            Tag::Code => "code",
            Tag::Explanation => "explanation",
            Tag::Flowchart => "flowchart",
            Tag::Question => "question",
            Tag::Answer => "answer",
            Tag::ModifiedNodes => "modified_nodes",
        }
    }

    pub fn from_name(name: &str) -> Option<Tag> {
        Tag::ALL.into_iter().find(|t| t.name() == name)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub tag: Tag,
    pub body: String,
    /// Prose found outside any tag, kept as an `answer`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub implicit: bool,
}

/// Model output split into tagged segments, in order of appearance.
/// Bodies have been validated, so the typed accessors cannot fail.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedResponse {
    pub segments: Vec<Segment>,
}

impl TaggedResponse {
    pub fn get(&self, tag: Tag) -> Option<&str> {
        self.segments
            .iter()
            .find(|s| s.tag == tag && !s.implicit)
            .map(|s| s.body.as_str())
    }

    /// Tags present, explicit or implicit.
    pub fn tags(&self) -> BTreeSet<Tag> {
        self.segments.iter().map(|s| s.tag).collect()
    }

    pub fn explicit_tags(&self) -> BTreeSet<Tag> {
        self.segments
            .iter()
            .filter(|s| !s.implicit)
            .map(|s| s.tag)
            .collect()
    }

    /// The answer text: the explicit `answer` if any, else the prose around
    /// the tags.
    pub fn answer(&self) -> Option<&str> {
        self.get(Tag::Answer).or_else(|| {
            self.segments
                .iter()
                .find(|s| s.implicit)
                .map(|s| s.body.as_str())
        })
    }

    pub fn program(&self) -> Option<RobotProgram> {
        self.get(Tag::Code).and_then(|c| parse_program(c).ok())
    }

    pub fn graph(&self) -> Option<FlowGraph> {
        self.get(Tag::Flowchart).and_then(|c| parse_mermaid(c).ok())
    }

    pub fn requirements(&self) -> Option<RequirementList> {
        self.get(Tag::Requirements)
            .and_then(|c| RequirementList::parse(c).ok())
    }

    pub fn modified_nodes(&self) -> Option<Vec<String>> {
        self.get(Tag::ModifiedNodes).map(split_ids)
    }
}

fn split_ids(body: &str) -> Vec<String> {
    body.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum RepairReason {
    Empty,
    UnknownTag { name: String },
    Unbalanced { name: String },
    Nested { outer: Tag, inner: Tag },
    Duplicate { tag: Tag },
    Unexpected { tag: Tag },
    Missing { tag: Tag },
    InvalidBody { tag: Tag, detail: String },
    /// A check that needs more than one segment, such as code and
    /// flowchart disagreeing.
    Semantic { detail: String },
}

impl fmt::Display for RepairReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RepairReason::Empty => f.write_str("empty response"),
            RepairReason::UnknownTag { name } => write!(f, "unknown tag <{name}>"),
            RepairReason::Unbalanced { name } => write!(f, "unbalanced tag <{name}>"),
            RepairReason::Nested { outer, inner } => {
                write!(f, "tag <{inner}> nested inside <{outer}>")
            }
            RepairReason::Duplicate { tag } => write!(f, "tag <{tag}> appears twice"),
            RepairReason::Unexpected { tag } => write!(f, "tag <{tag}> is not allowed here"),
            RepairReason::Missing { tag } => write!(f, "missing <{tag}>"),
            RepairReason::InvalidBody { tag, detail } => write!(f, "invalid {tag} body: {detail}"),
            RepairReason::Semantic { detail } => f.write_str(detail),
        }
    }
}

/// Why a response cannot be used, with the message sent back to the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{reason}")]
pub struct RepairNeeded {
    pub reason: RepairReason,
    pub instruction: String,
}

impl RepairNeeded {
    pub fn new(reason: RepairReason) -> Self {
        let allowed = Tag::ALL.map(|t| format!("<{t}>")).join(", ");
        let hint = match &reason {
            RepairReason::Empty => format!("Answer using the tags {allowed}."),
            RepairReason::UnknownTag { .. } => format!("Use only the tags {allowed}."),
            RepairReason::Unbalanced { name } => {
                format!("Close every tag: write <{name}> ... </{name}>.")
            }
            RepairReason::Nested { .. } => "Tags must not be nested.".to_string(),
            RepairReason::Duplicate { tag } => format!("Write exactly one <{tag}> section."),
            RepairReason::Unexpected { tag } => format!("Do not use <{tag}> in this reply."),
            RepairReason::Missing { tag } => format!("Include a <{tag}> section."),
            RepairReason::InvalidBody { tag: Tag::Code, .. } => {
                "Write the code in CocoScript, one command per line, closing every block with `end`."
                    .to_string()
            }
            RepairReason::InvalidBody { tag: Tag::Flowchart, .. } => {
                "Write the flowchart as `flowchart TD` followed by node and edge lines.".to_string()
            }
            RepairReason::InvalidBody {
                tag: Tag::Requirements,
                ..
            } => "Write the requirements as a numbered list: `1. ...`, `2. ...`.".to_string(),
            RepairReason::InvalidBody {
                tag: Tag::ModifiedNodes,
                ..
            } => "List node ids separated by commas, for example `n2, n3`.".to_string(),
            RepairReason::InvalidBody { .. } => String::new(),
            RepairReason::Semantic { .. } => String::new(),
        };
        let instruction = format!(
            "Your previous reply could not be used: {reason}. {hint} Reply again in the required format."
        )
        .replace(".  ", ". ");
        RepairNeeded {
            reason,
            instruction,
        }
    }

    pub fn semantic(detail: impl Into<String>, hint: &str) -> Self {
        let reason = RepairReason::Semantic {
            detail: detail.into(),
        };
        let instruction =
            format!("Your previous reply could not be used: {reason}. {hint} Reply again in the required format.");
        RepairNeeded {
            reason,
            instruction,
        }
    }
}

/// How strictly `code` bodies are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CodeBody {
    /// A complete program.
    #[default]
    Program,
    /// A replacement for part of a program: a block of steps or a single
    /// command line (including `userRequest:`).
    Fragment,
}

/// Parse model output with complete-program `code` bodies.
pub fn parse_tagged_output(raw: &str) -> Result<TaggedResponse, RepairNeeded> {
    parse_tagged_output_with(raw, CodeBody::Program)
}

pub fn parse_tagged_output_with(raw: &str, code: CodeBody) -> Result<TaggedResponse, RepairNeeded> {
    let mut segments = Vec::new();
    let mut prose: Vec<&str> = Vec::new();
    let mut prose_at = None;
    let mut seen = BTreeSet::new();
    let mut rest = raw;
    loop {
        let Some((start, end, name, closing)) = next_tag(rest) else {
            prose.push(rest);
            break;
        };
        prose.push(&rest[..start]);
        let tag = Tag::from_name(name).ok_or_else(|| {
            RepairNeeded::new(RepairReason::UnknownTag {
                name: name.to_string(),
            })
        })?;
        if closing {
            return Err(RepairNeeded::new(RepairReason::Unbalanced {
                name: name.to_string(),
            }));
        }
        let after = &rest[end..];
        let close = format!("</{name}>");
        let body_len = after.find(&close).ok_or_else(|| {
            RepairNeeded::new(RepairReason::Unbalanced {
                name: name.to_string(),
            })
        })?;
        let body = &after[..body_len];
        if let Some(inner) = vocabulary_tag_in(body) {
            return Err(RepairNeeded::new(RepairReason::Nested { outer: tag, inner }));
        }
        if !seen.insert(tag) {
            return Err(RepairNeeded::new(RepairReason::Duplicate { tag }));
        }
        if prose_at.is_none() && prose.iter().any(|p| !p.trim().is_empty()) {
            prose_at = Some(segments.len());
        }
        let body = body.trim_matches(|c: char| c == '\n' || c == '\r').to_string();
        check_body(tag, &body, code)?;
        segments.push(Segment {
            tag,
            body,
            implicit: false,
        });
        rest = &after[body_len + close.len()..];
    }
    let text: Vec<&str> = prose
        .iter()
        .map(|p| p.trim())
        .filter(|p| !p.is_empty())
        .collect();
    if !text.is_empty() {
        segments.insert(
            prose_at.unwrap_or(segments.len()),
            Segment {
                tag: Tag::Answer,
                body: text.join("\n"),
                implicit: true,
            },
        );
    }
    if segments.is_empty() {
        return Err(RepairNeeded::new(RepairReason::Empty));
    }
    Ok(TaggedResponse { segments })
}

/// Find the next `<name>` or `</name>` with a lowercase identifier.
/// Returns (start, end, name, is_closing).
fn next_tag(text: &str) -> Option<(usize, usize, &str, bool)> {
    let mut from = 0;
    while let Some(off) = text[from..].find('<') {
        let start = from + off;
        let after = &text[start + 1..];
        let (closing, ident_from) = match after.strip_prefix('/') {
            Some(a) => (true, a),
            None => (false, after),
        };
        let len = ident_from
            .find(|c: char| !(c.is_ascii_alphabetic() || c == '_'))
            .unwrap_or(ident_from.len());
        if len > 0 && ident_from[len..].starts_with('>') {
            let name = &ident_from[..len];
            let end = start + 1 + usize::from(closing) + len + 1;
            return Some((start, end, name, closing));
        }
        from = start + 1;
    }
    None
}

fn vocabulary_tag_in(body: &str) -> Option<Tag> {
    let mut rest = body;
    while let Some((_, end, name, _)) = next_tag(rest) {
        if let Some(t) = Tag::from_name(name) {
            return Some(t);
        }
        rest = &rest[end..];
    }
    None
}

fn check_body(tag: Tag, body: &str, code: CodeBody) -> Result<(), RepairNeeded> {
    let invalid = |detail: String| RepairNeeded::new(RepairReason::InvalidBody { tag, detail });
    if body.trim().is_empty() {
        return Err(invalid("the section is empty".into()));
    }
    match tag {
        Tag::Code => match parse_program(body) {
            Ok(_) => Ok(()),
            Err(e) => {
                if code == CodeBody::Fragment && parse_command(body.trim()).is_ok() {
                    return Ok(());
                }
                Err(invalid(e.to_string()))
            }
        },
        Tag::Flowchart => parse_mermaid(body).map(|_| ()).map_err(|e| invalid(e.to_string())),
        Tag::Requirements => RequirementList::parse(body)
            .map(|_| ())
            .map_err(|e| invalid(e.to_string())),
        Tag::ModifiedNodes => match split_ids(body).into_iter().find(|id| !valid_id(id)) {
            Some(bad) => Err(invalid(format!("`{bad}` is not a node id"))),
            None => Ok(()),
        },
        Tag::Explanation | Tag::Question | Tag::Answer => Ok(()),
    }
}

/// What the model meant by a response, read off its tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Intent {
    Explain,
    Modify,
    AskBack,
    /// A requirement list awaiting the user's confirmation.
    ConfirmPending,
    Confirm,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("contradictory tags in one reply: {}", .tags.iter().map(|t| t.name()).collect::<Vec<_>>().join(", "))]
pub struct AmbiguousIntent {
    pub tags: Vec<Tag>,
}

/// Route a response by its tag set. `code` wins over commentary tags;
/// a question next to an artifact, code next to requirements, or node ids
/// or a flowchart without code have no single reading.
pub fn detect_intent(resp: &TaggedResponse) -> Result<Intent, AmbiguousIntent> {
    intent_of(&resp.tags())
}

pub fn intent_of(tags: &BTreeSet<Tag>) -> Result<Intent, AmbiguousIntent> {
    let has = |t| tags.contains(&t);
    let artifact = has(Tag::Code) || has(Tag::Requirements) || has(Tag::Flowchart) || has(Tag::ModifiedNodes);
    let contradictory = (has(Tag::Question) && artifact)
        || (has(Tag::Code) && has(Tag::Requirements))
        || (!has(Tag::Code) && (has(Tag::Flowchart) || has(Tag::ModifiedNodes)));
    if contradictory {
        return Err(AmbiguousIntent {
            tags: tags.iter().copied().collect(),
        });
    }
    Ok(if has(Tag::Code) {
        Intent::Modify
    } else if has(Tag::Requirements) {
        Intent::ConfirmPending
    } else if has(Tag::Question) {
        Intent::AskBack
    } else {
        Intent::Explain
    })
}
