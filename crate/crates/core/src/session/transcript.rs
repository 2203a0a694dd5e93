use std::path::Path;

use serde::{Deserialize, Serialize};

use super::service::{ServiceError, SessionService};
use super::state::SessionState;
use crate::dsl::{emit_program, parse_program};
use crate::flowchart::{apply_edit, ast_to_graph, graph_to_render_json, GraphEdit};
use crate::llm::UserTurn;

pub const TRANSCRIPT_SCHEMA: &str = "transcript/v1";

/// One user action in a recorded session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum TranscriptStep {
    Message {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        confirm: Option<bool>,
    },
    /// Edit the current flowchart, then press Sync Change.
    Sync {
        #[serde(default)]
        edits: Vec<GraphEdit>,
    },
    DebugStart { nodes: Vec<String> },
    DebugEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema: String,
    pub steps: Vec<TranscriptStep>,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("cannot read {path}: {message}")]
    Load { path: String, message: String },
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: ServiceError,
    },
    #[error("step {step}: flowchart edit rejected: {message}")]
    Edit { step: usize, message: String },
    #[error("step {step}: code and flowchart disagree")]
    Incoherent { step: usize },
}

impl Transcript {
    pub fn parse(text: &str) -> Result<Self, TranscriptError> {
        let t: Transcript = serde_json::from_str(text).map_err(|e| TranscriptError::Load {
            path: "<text>".into(),
            message: e.to_string(),
        })?;
        if t.schema != TRANSCRIPT_SCHEMA {
            return Err(TranscriptError::Load {
                path: "<text>".into(),
                message: format!("unsupported schema `{}`", t.schema),
            });
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, TranscriptError> {
        let load = |message: String| TranscriptError::Load {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| load(e.to_string()))?;
        Self::parse(&text).map_err(|e| match e {
            TranscriptError::Load { message, .. } => load(message),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepReport {
    pub step: usize,
    pub summary: String,
    /// Program text after the step, if there is a program.
    pub code: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TranscriptRun {
    pub session: String,
    pub steps: Vec<StepReport>,
    pub state: SessionState,
}

impl TranscriptRun {
    pub fn final_code(&self) -> Option<String> {
        self.state.program.as_ref().map(emit_program)
    }
}

/// The stored graph must be what the stored code, read back as text,
/// converts to.
pub fn coherent(state: &SessionState) -> bool {
    match (&state.program, &state.graph) {
        (None, None) => true,
        (Some(p), Some(g)) => parse_program(&emit_program(p)).is_ok_and(|q| q == *p && ast_to_graph(&q) == *g),
        _ => false,
    }
}

/// Replay a transcript against a fresh session, checking coherence after
/// every step.
pub fn run_transcript(service: &SessionService, transcript: &Transcript) -> Result<TranscriptRun, TranscriptError> {
    let session = service
        .create_session()
        .map_err(|source| TranscriptError::Step { step: 0, source })?
        .id;
    let mut steps = Vec::new();
    for (i, step) in transcript.steps.iter().enumerate() {
        let n = i + 1;
        let fail = |source| TranscriptError::Step { step: n, source };
        let summary = match step {
            TranscriptStep::Message { text, confirm } => {
                let turn = UserTurn {
                    text: text.clone(),
                    confirm: *confirm,
                };
                service.post_message(&session, turn).map_err(fail)?.run.outcome.summary()
            }
            TranscriptStep::Sync { edits } => {
                let state = service.get(&session).map_err(fail)?;
                let mut graph = state.graph.ok_or(ServiceError::NoProgramYet).map_err(fail)?;
                for e in edits {
                    graph = apply_edit(&graph, e).map_err(|d| TranscriptError::Edit {
                        step: n,
                        message: d.message,
                    })?;
                }
                let doc = graph_to_render_json(&graph);
                service.sync_change(&session, &doc).map_err(fail)?.run.outcome.summary()
            }
            TranscriptStep::DebugStart { nodes } => service
                .magic_debug_start(&session, nodes.clone())
                .map_err(fail)?
                .run
                .outcome
                .summary(),
            TranscriptStep::DebugEnd => {
                service.magic_debug_end(&session).map_err(fail)?;
                String::new()
            }
        };
        let state = service.get(&session).map_err(fail)?;
        if !coherent(&state) {
            return Err(TranscriptError::Incoherent { step: n });
        }
        steps.push(StepReport {
            step: n,
            summary,
            code: state.program.as_ref().map(emit_program),
        });
    }
    let state = service
        .get(&session)
        .map_err(|source| TranscriptError::Step { step: 0, source })?;
    Ok(TranscriptRun { session, steps, state })
}
