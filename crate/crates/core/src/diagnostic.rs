//! Diagnostics shared by the DSL, flowchart and session layers.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// Stable diagnostic codes. The string form is part of the public API and
/// appears verbatim in JSON responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Code {
    // CocoScript parsing
    UnknownCommand,
    MalformedArgument,
    UnbalancedBlock,
    MultipleEntryTriggers,
    MisplacedEntryTrigger,
    ForeverNotLast,
    EmptyProgram,
    EmptyBlock,
    DuplicateArm,
    // validation against a world
    UnknownPlace,
    EmptyAskArm,
    UnreachableStep,
    // flowchart
    NonStructuredGraph,
    DanglingNode,
    MissingDecisionBranch,
    InvalidArity,
    MissingNode,
    DuplicateNodeId,
    InvalidNodeId,
    DuplicateEdge,
    InvalidLabel,
    QuestionMismatch,
    MermaidSyntax,
    UnsupportedFeature,
    SchemaViolation,
    UnsupportedPropEdit,
}

impl Code {
    pub fn as_str(self) -> &'static str {
        match self {
            Code::UnknownCommand => "UnknownCommand",
            Code::MalformedArgument => "MalformedArgument",
            Code::UnbalancedBlock => "UnbalancedBlock",
            Code::MultipleEntryTriggers => "MultipleEntryTriggers",
            Code::MisplacedEntryTrigger => "MisplacedEntryTrigger",
            Code::ForeverNotLast => "ForeverNotLast",
            Code::EmptyProgram => "EmptyProgram",
            Code::EmptyBlock => "EmptyBlock",
            Code::DuplicateArm => "DuplicateArm",
            Code::UnknownPlace => "UnknownPlace",
            Code::EmptyAskArm => "EmptyAskArm",
            Code::UnreachableStep => "UnreachableStep",
            Code::NonStructuredGraph => "NonStructuredGraph",
            Code::DanglingNode => "DanglingNode",
            Code::MissingDecisionBranch => "MissingDecisionBranch",
            Code::InvalidArity => "InvalidArity",
            Code::MissingNode => "MissingNode",
            Code::DuplicateNodeId => "DuplicateNodeId",
            Code::InvalidNodeId => "InvalidNodeId",
            Code::DuplicateEdge => "DuplicateEdge",
            Code::InvalidLabel => "InvalidLabel",
            Code::QuestionMismatch => "QuestionMismatch",
            Code::MermaidSyntax => "MermaidSyntax",
            Code::UnsupportedFeature => "UnsupportedFeature",
            Code::SchemaViolation => "SchemaViolation",
            Code::UnsupportedPropEdit => "UnsupportedPropEdit",
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where a diagnostic points. Text positions are 1-based.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Location {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub line: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub column: Option<usize>,
    /// Path into the program AST, e.g. `body[2].then[0]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    /// Flowchart node ids involved.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nodes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: Code,
    pub message: String,
    #[serde(default)]
    pub location: Location,
}

impl Diagnostic {
    pub fn error(code: Code, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            code,
            message: message.into(),
            location: Location::default(),
        }
    }

    pub fn warning(code: Code, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            ..Diagnostic::error(code, message)
        }
    }

    pub fn at_line(mut self, line: usize, column: usize) -> Self {
        self.location.line = Some(line);
        self.location.column = Some(column);
        self
    }

    pub fn at_path(mut self, path: impl Into<String>) -> Self {
        self.location.path = Some(path.into());
        self
    }

    pub fn with_nodes<I, S>(mut self, nodes: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.location.nodes.extend(nodes.into_iter().map(Into::into));
        self
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev}[{}]", self.code)?;
        if let Some(line) = self.location.line {
            write!(f, " {}:{}", line, self.location.column.unwrap_or(1))?;
        }
        if let Some(path) = &self.location.path {
            write!(f, " at {path}")?;
        }
        if !self.location.nodes.is_empty() {
            write!(f, " (nodes: {})", self.location.nodes.join(", "))?;
        }
        write!(f, ": {}", self.message)
    }
}

/// A non-empty list of diagnostics returned by fallible conversions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[serde(transparent)]
pub struct Diagnostics(pub Vec<Diagnostic>);

impl Diagnostics {
    pub fn single(d: Diagnostic) -> Self {
        Diagnostics(vec![d])
    }

    pub fn has_code(&self, code: Code) -> bool {
        self.0.iter().any(|d| d.code == code)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.0.iter().filter(|d| d.is_error())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Diagnostic> {
        self.0.iter()
    }
}

impl fmt::Display for Diagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{d}")?;
        }
        Ok(())
    }
}

pub(crate) fn has_errors(diags: &[Diagnostic]) -> bool {
    diags.iter().any(Diagnostic::is_error)
}
