use serde::{Deserialize, Serialize};

use crate::dsl::RobotProgram;
use crate::flowchart::{ast_to_graph, diff_graphs, FlowGraph, GraphDiff};
use crate::llm::{ChainOutcome, RequirementList, Speaker, Turn, UserTurn};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "camelCase")]
pub enum Mode {
    #[default]
    Normal,
    MagicDebug { selected: Vec<String> },
}

impl Mode {
    pub fn selection(&self) -> &[String] {
        match self {
            Mode::Normal => &[],
            Mode::MagicDebug { selected } => selected,
        }
    }
}

/// Everything the service knows about one conversation. Rebuilt from the
/// event log by folding [`SessionEvent`]s with [`SessionState::apply`].
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionState {
    pub id: String,
    pub transcript: Vec<Turn>,
    pub requirements: Option<RequirementList>,
    pub program: Option<RobotProgram>,
    pub graph: Option<FlowGraph>,
    pub mode: Mode,
    pub last_diff: Option<GraphDiff>,
    /// Sequence number of the last event applied.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum SessionEvent {
    Created { id: String },
    UserTurn { turn: UserTurn },
    Outcome { outcome: ChainOutcome },
    /// The edited flowchart submitted with Sync Change, after stale notes
    /// were dropped. The resulting program follows as an `Outcome`.
    Synced { edited: FlowGraph },
    DebugStarted { selected: Vec<String> },
    DebugEnded,
    Deployed { run: String, target: String },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReplayError {
    #[error("event {got} does not follow {prev}")]
    Gap { prev: u64, got: u64 },
    #[error("event {seq} belongs to session {found}, not {expected}")]
    WrongSession { seq: u64, expected: String, found: String },
    #[error("the log must start with `created`")]
    NotCreated,
}

impl SessionState {
    pub fn new(id: impl Into<String>) -> Self {
        SessionState {
            id: id.into(),
            ..SessionState::default()
        }
    }

    /// Fold one event in. Events carry everything needed, so this never
    /// calls out to a model.
    pub fn apply(&mut self, event: &SessionEvent) {
        match event {
            SessionEvent::Created { id } => *self = SessionState::new(id.clone()),
            SessionEvent::UserTurn { turn } => self.transcript.push(Turn {
                speaker: Speaker::User,
                text: turn.text.clone(),
            }),
            SessionEvent::Outcome { outcome } => self.apply_outcome(outcome),
            SessionEvent::Synced { .. } => {}
            SessionEvent::DebugStarted { selected } => {
                self.mode = Mode::MagicDebug {
                    selected: selected.clone(),
                }
            }
            SessionEvent::DebugEnded => self.mode = Mode::Normal,
            SessionEvent::Deployed { .. } => {}
        }
    }

    fn apply_outcome(&mut self, outcome: &ChainOutcome) {
        match outcome {
            ChainOutcome::RequirementsProposed { requirements, .. } => {
                self.requirements = Some(requirements.clone());
            }
            ChainOutcome::ProgramGenerated {
                program, requirements, ..
            } => {
                if let Some(r) = requirements {
                    self.requirements = Some(r.clone());
                }
                self.set_program(program.clone());
            }
            ChainOutcome::NodesModified { program, .. } => self.set_program(program.clone()),
            ChainOutcome::AnswerOnly { .. } => {}
        }
        self.transcript.push(Turn {
            speaker: Speaker::System,
            text: outcome.summary(),
        });
    }

    /// The graph is always derived from the program.
    fn set_program(&mut self, program: RobotProgram) {
        let graph = ast_to_graph(&program);
        self.last_diff = Some(match &self.graph {
            Some(before) => diff_graphs(before, &graph),
            None => GraphDiff::default(),
        });
        self.graph = Some(graph);
        self.program = Some(program);
    }

    /// Rebuild a state from `(seq, event)` pairs, optionally continuing
    /// from a snapshot.
    pub fn replay<'a>(
        id: &str,
        start: Option<SessionState>,
        events: impl IntoIterator<Item = (u64, &'a SessionEvent)>,
    ) -> Result<SessionState, ReplayError> {
        let mut state = start.unwrap_or_default();
        let mut created = state.seq > 0;
        for (seq, event) in events {
            if seq <= state.seq && created {
                continue;
            }
            if seq != state.seq + 1 {
                return Err(ReplayError::Gap { prev: state.seq, got: seq });
            }
            match event {
                SessionEvent::Created { id: found } if found != id => {
                    return Err(ReplayError::WrongSession {
                        seq,
                        expected: id.to_string(),
                        found: found.clone(),
                    })
                }
                SessionEvent::Created { .. } => created = true,
                _ if !created => return Err(ReplayError::NotCreated),
                _ => {}
            }
            state.apply(event);
            state.seq = seq;
        }
        if !created {
            return Err(ReplayError::NotCreated);
        }
        Ok(state)
    }
}
