use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequirementState {
    #[default]
    Pending,
    Confirmed,
}

/// The numbered list of what the user wants, shown back for confirmation
/// before any code is generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequirementList {
    pub items: Vec<String>,
    pub state: RequirementState,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RequirementError {
    #[error("the list has no items")]
    Empty,
    #[error("line {line} is not a numbered item")]
    NotNumbered { line: usize },
    #[error("item {found} should be numbered {expected}")]
    OutOfSequence { expected: usize, found: usize },
}

impl RequirementList {
    pub fn pending(items: Vec<String>) -> Self {
        RequirementList {
            items,
            state: RequirementState::Pending,
        }
    }

    /// Parse `1. text` / `1) text` lines numbered from 1. An unnumbered line
    /// after an item continues that item.
    pub fn parse(text: &str) -> Result<Self, RequirementError> {
        let mut items: Vec<String> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            match numbered(t) {
                Some((n, body)) => {
                    if n != items.len() + 1 {
                        return Err(RequirementError::OutOfSequence {
                            expected: items.len() + 1,
                            found: n,
                        });
                    }
                    items.push(body.to_string());
                }
                None => match items.last_mut() {
                    Some(last) => {
                        last.push(' ');
                        last.push_str(t);
                    }
                    None => return Err(RequirementError::NotNumbered { line: i + 1 }),
                },
            }
        }
        if items.is_empty() {
            return Err(RequirementError::Empty);
        }
        Ok(RequirementList::pending(items))
    }

    pub fn is_pending(&self) -> bool {
        self.state == RequirementState::Pending
    }

    pub fn confirmed(mut self) -> Self {
        self.state = RequirementState::Confirmed;
        self
    }
}

fn numbered(line: &str) -> Option<(usize, &str)> {
    let digits = line.find(|c: char| !c.is_ascii_digit())?;
    if digits == 0 {
        return None;
    }
    let rest = line[digits..].strip_prefix(['.', ')'])?;
    let body = rest.trim();
    if body.is_empty() || !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some((line[..digits].parse().ok()?, body))
}

/// One item per line as `1. text`.
impl fmt::Display for RequirementList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, item) in self.items.iter().enumerate() {
            if i > 0 {
                f.write_str("\n")?;
            }
            write!(f, "{}. {}", i + 1, item)?;
        }
        Ok(())
    }
}
