use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::preamble::{assemble_prompt, PromptError, PromptPreamble};
use super::provider::{ChatMessage, ChatRequest, Provider, ProviderError, Role};
use super::requirements::RequirementList;
use super::scope::{check_coherence, check_region_isolation};
use super::tags::{
    detect_intent, parse_tagged_output_with, CodeBody, Intent, RepairNeeded, RepairReason, Tag,
    TaggedResponse,
};
use super::templates;
use crate::cancel::CancelToken;
use crate::diagnostic::{Code, Diagnostic, Diagnostics};
use crate::dsl::{
    check_structure, emit_program, parse_command, parse_program, validate_program, Command,
    RobotProgram, Step, WorldCatalog,
};
use crate::flowchart::{ast_to_graph, emit_mermaid, graph_to_ast_with_map, FlowGraph, NodeOrigin};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum FunctionKind {
    Authoring,
    ConversationalModify,
    FlowchartSync,
    MagicDebug,
    NodePropertyEdit,
}

/// Slots any step may reference.
pub const SLOTS: [&str; 10] = [
    "places",
    "requirements",
    "current_code",
    "flowchart",
    "selected_nodes",
    "node_id",
    "node_command",
    "node_description",
    "max_words",
    "change_summary",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainStep {
    pub name: &'static str,
    pub preamble: PromptPreamble,
    /// Slots filled from session state before the call.
    pub slots: Vec<&'static str>,
    pub expected_tags: BTreeSet<Tag>,
    /// The workflow segment branches on user intent.
    pub routes_intent: bool,
    pub code_body: CodeBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainSpec {
    pub kind: FunctionKind,
    pub steps: Vec<ChainStep>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SpecError {
    #[error("step `{step}`: {source}")]
    Preamble { step: String, source: PromptError },
    #[error("step `{step}` uses slot `{slot}` it does not declare")]
    UndeclaredSlot { step: String, slot: String },
    #[error("step `{step}` declares unknown slot `{slot}`")]
    UnknownSlot { step: String, slot: String },
}

fn step(name: &'static str, slots: &[&'static str], tags: &[Tag], routes_intent: bool) -> ChainStep {
    let preamble = PromptPreamble::parse(templates::text(name).expect("builtin template"))
        .expect("builtin template parses");
    ChainStep {
        name,
        preamble,
        slots: slots.to_vec(),
        expected_tags: tags.iter().copied().collect(),
        routes_intent,
        code_body: CodeBody::Program,
    }
}

fn node_edit_step() -> ChainStep {
    ChainStep {
        code_body: CodeBody::Fragment,
        ..step(
            "node_edit",
            &["current_code", "node_id", "node_command", "node_description", "places"],
            &[Tag::Code],
            false,
        )
    }
}

impl ChainSpec {
    /// The built-in chain for one function, with its versioned templates.
    pub fn builtin(kind: FunctionKind) -> ChainSpec {
        use Tag::*;
        let steps = match kind {
            FunctionKind::Authoring => vec![
                step(
                    "requirements",
                    &["places", "requirements", "max_words"],
                    &[Requirements, Question, Answer],
                    true,
                ),
                step(
                    "generate",
                    &["places", "requirements", "max_words"],
                    &[Code, Explanation, Flowchart, Question, Answer],
                    true,
                ),
            ],
            FunctionKind::ConversationalModify => vec![step(
                "modify",
                &["current_code", "flowchart", "places", "max_words"],
                &[Code, Explanation, Flowchart, Question, Answer],
                true,
            )],
            FunctionKind::FlowchartSync => vec![
                node_edit_step(),
                step("explain", &["current_code", "max_words"], &[Explanation, Answer], false),
            ],
            FunctionKind::MagicDebug => vec![step(
                "debug",
                &["current_code", "flowchart", "selected_nodes", "places", "max_words"],
                &[Answer, Code, Flowchart, ModifiedNodes, Explanation, Question],
                true,
            )],
            FunctionKind::NodePropertyEdit => vec![node_edit_step()],
        };
        ChainSpec { kind, steps }
    }

    pub fn step(&self, name: &str) -> Option<&ChainStep> {
        self.steps.iter().find(|s| s.name == name)
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        for s in &self.steps {
            s.preamble.validate(s.routes_intent).map_err(|source| SpecError::Preamble {
                step: s.name.to_string(),
                source,
            })?;
            if let Some(slot) = s.slots.iter().find(|x| !SLOTS.contains(x)) {
                return Err(SpecError::UnknownSlot {
                    step: s.name.to_string(),
                    slot: slot.to_string(),
                });
            }
            if let Some(slot) = s.preamble.slots().into_iter().find(|x| !s.slots.contains(&x.as_str())) {
                return Err(SpecError::UndeclaredSlot {
                    step: s.name.to_string(),
                    slot,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    System,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

/// A chat message from the user. `confirm` carries the explicit
/// confirm/reject buttons for a pending requirement list.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UserTurn {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirm: Option<bool>,
}

impl UserTurn {
    pub fn text(text: impl Into<String>) -> Self {
        UserTurn {
            text: text.into(),
            confirm: None,
        }
    }

    pub fn confirm(text: impl Into<String>) -> Self {
        UserTurn {
            text: text.into(),
            confirm: Some(true),
        }
    }

    pub fn reject(text: impl Into<String>) -> Self {
        UserTurn {
            text: text.into(),
            confirm: Some(false),
        }
    }

    pub fn intent(&self) -> Option<Intent> {
        self.confirm.map(|c| if c { Intent::Confirm } else { Intent::Reject })
    }
}

/// Session state a chain reads.
#[derive(Debug, Clone, Copy, Default)]
pub struct ChainContext<'a> {
    pub transcript: &'a [Turn],
    pub requirements: Option<&'a RequirementList>,
    pub program: Option<&'a RobotProgram>,
    pub places: &'a [String],
    pub selection: &'a [String],
}

#[derive(Debug, Clone, Copy)]
pub enum ChainRequest<'a> {
    Message(&'a UserTurn),
    /// Explain the selected nodes on entering debug mode.
    DebugStart,
    /// The user's edited flowchart.
    Sync(&'a FlowGraph),
}

/// User message sent when debug mode starts.
pub const DEBUG_START_PROMPT: &str = "Explain what the selected nodes do.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ChainSettings {
    pub max_repair_retries: u32,
    /// Cap on explanation length requested in every preamble.
    pub max_words: usize,
    /// Forward at most this many transcript turns, dropping the oldest.
    pub history_limit: Option<usize>,
}

impl Default for ChainSettings {
    fn default() -> Self {
        ChainSettings {
            max_repair_retries: 2,
            max_words: 120,
            history_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ChainOutcome {
    RequirementsProposed {
        requirements: RequirementList,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        comment: Option<String>,
    },
    #[serde(rename_all = "camelCase")]
    ProgramGenerated {
        program: RobotProgram,
        code: String,
        explanation: String,
        graph: FlowGraph,
        /// The confirmed list this program was generated from.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requirements: Option<RequirementList>,
    },
    AnswerOnly {
        text: String,
        intent: Intent,
    },
    #[serde(rename_all = "camelCase")]
    NodesModified {
        program: RobotProgram,
        code: String,
        explanation: String,
        graph: FlowGraph,
        modified_nodes: Vec<String>,
    },
}

impl ChainOutcome {
    pub fn program(&self) -> Option<&RobotProgram> {
        match self {
            ChainOutcome::ProgramGenerated { program, .. } | ChainOutcome::NodesModified { program, .. } => {
                Some(program)
            }
            _ => None,
        }
    }

    /// Text shown to the user in the transcript.
    pub fn summary(&self) -> String {
        match self {
            ChainOutcome::RequirementsProposed { requirements, comment } => match comment {
                Some(c) => format!("{c}\n{requirements}"),
                None => requirements.to_string(),
            },
            ChainOutcome::ProgramGenerated { explanation, code, .. }
            | ChainOutcome::NodesModified { explanation, code, .. } => {
                if explanation.is_empty() {
                    code.clone()
                } else {
                    explanation.clone()
                }
            }
            ChainOutcome::AnswerOnly { text, .. } => text.clone(),
        }
    }

    fn generated(program: RobotProgram, explanation: String, requirements: Option<RequirementList>) -> Self {
        ChainOutcome::ProgramGenerated {
            code: emit_program(&program),
            graph: ast_to_graph(&program),
            program,
            explanation,
            requirements,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairRecord {
    pub step: String,
    /// 1-based retry number within the step.
    pub attempt: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRun {
    pub outcome: ChainOutcome,
    pub repairs: Vec<RepairRecord>,
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChainError {
    #[error("provider timed out")]
    ProviderTimeout,
    #[error("provider error{}: {message}", .status.map(|s| format!(" {s}")).unwrap_or_default())]
    Provider { status: Option<u16>, message: String },
    #[error("step `{step}` still invalid after {attempts} attempts: {reason}")]
    RepairExhausted {
        step: String,
        attempts: u32,
        reason: String,
    },
    #[error("contradictory tags in one reply: {}", .tags.iter().map(|t| t.name()).collect::<Vec<_>>().join(", "))]
    AmbiguousIntent { tags: Vec<Tag> },
    #[error("code and flowchart disagree: {reason}")]
    Incoherent { reason: String },
    #[error("change outside the selected nodes: {reason}")]
    OutOfScope { reason: String },
    #[error("cancelled")]
    Cancelled,
    #[error("there is no pending requirement list to confirm or reject")]
    NotPending,
    #[error("there is no program yet")]
    NoProgram,
    #[error("unknown node ids: {}", .0.join(", "))]
    UnknownNodes(Vec<String>),
    #[error("this chain does not handle that request")]
    WrongRequest,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{0}")]
    Invalid(Diagnostics),
}

impl ChainError {
    /// Stable short code used in API responses.
    pub fn code(&self) -> &'static str {
        match self {
            ChainError::ProviderTimeout => "ProviderTimeout",
            ChainError::Provider { .. } => "ProviderError",
            ChainError::RepairExhausted { .. } => "RepairExhausted",
            ChainError::AmbiguousIntent { .. } => "AmbiguousIntent",
            ChainError::Incoherent { .. } => "Incoherent",
            ChainError::OutOfScope { .. } => "OutOfScope",
            ChainError::Cancelled => "Cancelled",
            ChainError::NotPending => "NotPending",
            ChainError::NoProgram => "NoProgramYet",
            ChainError::UnknownNodes(_) => "UnknownNodeId",
            ChainError::WrongRequest => "WrongRequest",
            ChainError::Prompt(PromptError::MissingSlot(_)) => "MissingSlot",
            ChainError::Prompt(_) => "InvalidTemplate",
            ChainError::Invalid(d) => d.0.first().map_or("Invalid", |d| d.code.as_str()),
        }
    }
}

impl From<ProviderError> for ChainError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::Timeout(_) => ChainError::ProviderTimeout,
            ProviderError::Cancelled => ChainError::Cancelled,
            ProviderError::Status { code, message } => ChainError::Provider {
                status: Some(code),
                message,
            },
            other => ChainError::Provider {
                status: None,
                message: other.to_string(),
            },
        }
    }
}

enum Failure {
    /// Fixable by re-prompting; counts against the repair budget.
    Repair(RepairNeeded),
    /// The reply is well-formed but wrong. One re-prompt, then `error`.
    Semantic(RepairNeeded, ChainError),
    Fatal(ChainError),
}

impl From<RepairNeeded> for Failure {
    fn from(r: RepairNeeded) -> Self {
        Failure::Repair(r)
    }
}

fn ambiguous(tags: Vec<Tag>) -> Failure {
    Failure::Fatal(ChainError::AmbiguousIntent { tags })
}

struct Env<'a> {
    ctx: ChainContext<'a>,
    provider: &'a dyn Provider,
    settings: &'a ChainSettings,
    cancel: &'a CancelToken,
}

#[derive(Default)]
struct Log {
    repairs: Vec<RepairRecord>,
    calls: usize,
}

struct Runner<'a> {
    env: Env<'a>,
    log: Log,
}

impl Env<'_> {
    fn history(&self) -> Vec<ChatMessage> {
        let turns = self.ctx.transcript;
        let skip = self
            .settings
            .history_limit
            .map_or(0, |n| turns.len().saturating_sub(n));
        turns[skip..]
            .iter()
            .map(|t| {
                let role = match t.speaker {
                    Speaker::User => Role::User,
                    Speaker::System => Role::Assistant,
                };
                ChatMessage::new(role, t.text.clone())
            })
            .collect()
    }

    fn base_slots(&self) -> BTreeMap<String, String> {
        let mut slots = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            slots.insert(k.to_string(), v);
        };
        put("places", self.ctx.places.join(", "));
        put("max_words", self.settings.max_words.to_string());
        put(
            "requirements",
            self.ctx
                .requirements
                .map_or_else(|| "(none yet)".to_string(), |r| r.to_string()),
        );
        if let Some(p) = self.ctx.program {
            put("current_code", emit_program(p));
            put("flowchart", emit_mermaid(&ast_to_graph(p)));
            let graph = ast_to_graph(p);
            let sel: Vec<String> = self
                .ctx
                .selection
                .iter()
                .filter_map(|id| graph.node(id).map(|n| format!("{id}: {}", n.label)))
                .collect();
            put("selected_nodes", sel.join("\n"));
        }
        slots
    }

    /// Call one step until its reply is accepted, re-prompting with repair
    /// instructions. Each retry appends to the conversation.
    fn call<T>(
        &self,
        log: &mut Log,
        step: &ChainStep,
        slots: &BTreeMap<String, String>,
        user: &str,
        mut accept: impl FnMut(&TaggedResponse) -> Result<T, Failure>,
    ) -> Result<T, ChainError> {
        let mut messages = vec![ChatMessage::new(Role::System, assemble_prompt(&step.preamble, slots)?)];
        messages.extend(self.history());
        messages.push(ChatMessage::new(Role::User, user));
        let mut retries = 0u32;
        let mut semantic_used = false;
        loop {
            if self.cancel.is_cancelled() {
                return Err(ChainError::Cancelled);
            }
            let request = ChatRequest {
                step: step.name.to_string(),
                messages: messages.clone(),
            };
            let raw = self.provider.complete(&request, self.cancel)?;
            log.calls += 1;
            let parsed = parse_tagged_output_with(&raw, step.code_body).and_then(|r| {
                match r.explicit_tags().into_iter().find(|t| !step.expected_tags.contains(t)) {
                    Some(tag) => Err(RepairNeeded::new(RepairReason::Unexpected { tag })),
                    None => Ok(r),
                }
            });
            let failure = match parsed {
                Err(r) => Failure::Repair(r),
                Ok(resp) => match accept(&resp) {
                    Ok(v) => return Ok(v),
                    Err(f) => f,
                },
            };
            let repair = match failure {
                Failure::Fatal(e) => return Err(e),
                Failure::Repair(r) => {
                    if retries >= self.settings.max_repair_retries {
                        return Err(ChainError::RepairExhausted {
                            step: step.name.to_string(),
                            attempts: retries + 1,
                            reason: r.reason.to_string(),
                        });
                    }
                    r
                }
                Failure::Semantic(r, err) => {
                    if semantic_used || retries >= self.settings.max_repair_retries {
                        return Err(err);
                    }
                    semantic_used = true;
                    r
                }
            };
            retries += 1;
            log::debug!("step {} retry {retries}: {}", step.name, repair.reason);
            log.repairs.push(RepairRecord {
                step: step.name.to_string(),
                attempt: retries,
                reason: repair.reason.to_string(),
            });
            messages.push(ChatMessage::new(Role::Assistant, raw));
            messages.push(ChatMessage::new(Role::User, repair.instruction));
        }
    }

    fn answer_only(resp: &TaggedResponse, intent: Intent) -> ChainOutcome {
        let text = match intent {
            Intent::AskBack => resp.get(Tag::Question),
            _ => resp.answer().or_else(|| resp.get(Tag::Explanation)),
        };
        ChainOutcome::AnswerOnly {
            text: text.unwrap_or_default().to_string(),
            intent,
        }
    }

    fn check_places(&self, program: &RobotProgram) -> Result<(), Failure> {
        if self.ctx.places.is_empty() {
            return Ok(());
        }
        let catalog = WorldCatalog::new(self.ctx.places.iter().cloned());
        let errors: Vec<String> = validate_program(program, &catalog)
            .into_iter()
            .filter(|d| d.is_error())
            .map(|d| d.message)
            .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Failure::Repair(RepairNeeded::new(RepairReason::InvalidBody {
                tag: Tag::Code,
                detail: errors.join("; "),
            })))
        }
    }

    /// Program from a reply that carries code, checked against its
    /// flowchart when one is given.
    fn program_of(&self, resp: &TaggedResponse) -> Result<RobotProgram, Failure> {
        let program = resp.program().expect("validated code body");
        self.check_places(&program)?;
        if let Some(chart) = resp.get(Tag::Flowchart) {
            if let Err(reason) = check_coherence(&program, chart) {
                return Err(Failure::Semantic(
                    RepairNeeded::semantic(
                        format!("the flowchart does not match the code ({reason})"),
                        "Make the flowchart describe exactly the program in <code>.",
                    ),
                    ChainError::Incoherent { reason },
                ));
            }
        }
        Ok(program)
    }

}

impl Runner<'_> {
    fn propose(&mut self, step: &ChainStep, text: &str) -> Result<ChainOutcome, ChainError> {
        let env = &self.env;
        let slots = env.base_slots();
        env.call(&mut self.log, step, &slots, text, |resp| {
            let intent = detect_intent(resp).map_err(|e| ambiguous(e.tags))?;
            Ok(match intent {
                Intent::ConfirmPending => ChainOutcome::RequirementsProposed {
                    requirements: resp.requirements().expect("validated list"),
                    comment: resp.answer().map(str::to_string),
                },
                other => Env::answer_only(resp, other),
            })
        })
    }

    fn authoring(&mut self, spec: &ChainSpec, turn: &UserTurn) -> Result<ChainOutcome, ChainError> {
        let env = &self.env;
        let pending = env.ctx.requirements.filter(|r| r.is_pending());
        match turn.confirm {
            None => self.propose(&spec.steps[0], &turn.text),
            Some(false) => {
                pending.ok_or(ChainError::NotPending)?;
                self.propose(&spec.steps[0], &turn.text)
            }
            Some(true) => {
                let confirmed = pending.ok_or(ChainError::NotPending)?.clone().confirmed();
                let slots = env.base_slots();
                let step = &spec.steps[1];
                let outcome = env.call(&mut self.log, step, &slots, &turn.text, |resp| {
                    let intent = detect_intent(resp).map_err(|e| ambiguous(e.tags))?;
                    if intent != Intent::Modify {
                        return Ok(Env::answer_only(resp, intent));
                    }
                    let program = env.program_of(resp)?;
                    let explanation = resp.get(Tag::Explanation).unwrap_or_default().to_string();
                    Ok(ChainOutcome::generated(program, explanation, Some(confirmed.clone())))
                })?;
                Ok(outcome)
            }
        }
    }

    fn modify(&mut self, spec: &ChainSpec, turn: &UserTurn) -> Result<ChainOutcome, ChainError> {
        let env = &self.env;
        if turn.confirm.is_some() {
            return Err(ChainError::NotPending);
        }
        env.ctx.program.ok_or(ChainError::NoProgram)?;
        let slots = env.base_slots();
        env.call(&mut self.log, &spec.steps[0], &slots, &turn.text, |resp| {
            let intent = detect_intent(resp).map_err(|e| ambiguous(e.tags))?;
            if intent != Intent::Modify {
                return Ok(Env::answer_only(resp, intent));
            }
            let program = env.program_of(resp)?;
            let explanation = resp.get(Tag::Explanation).unwrap_or_default().to_string();
            Ok(ChainOutcome::generated(program, explanation, None))
        })
    }

    fn debug(&mut self, spec: &ChainSpec, text: &str) -> Result<ChainOutcome, ChainError> {
        let env = &self.env;
        let before = env.ctx.program.ok_or(ChainError::NoProgram)?;
        let selection = env.ctx.selection;
        let graph = ast_to_graph(before);
        let unknown: Vec<String> = selection
            .iter()
            .filter(|id| graph.node(id).is_none())
            .cloned()
            .collect();
        if !unknown.is_empty() || selection.is_empty() {
            return Err(ChainError::UnknownNodes(unknown));
        }
        let slots = env.base_slots();
        env.call(&mut self.log, &spec.steps[0], &slots, text, |resp| {
            let intent = detect_intent(resp).map_err(|e| ambiguous(e.tags))?;
            if intent != Intent::Modify {
                return Ok(Env::answer_only(resp, intent));
            }
            let Some(modified) = resp.modified_nodes() else {
                return Err(RepairNeeded::new(RepairReason::Missing {
                    tag: Tag::ModifiedNodes,
                })
                .into());
            };
            let program = env.program_of(resp)?;
            let scope_hint = format!(
                "Change only the lines of the selected nodes ({}) and list only those ids in <modified_nodes>.",
                selection.join(", ")
            );
            let outside: Vec<&String> = modified.iter().filter(|id| !selection.contains(id)).collect();
            let scoped = if outside.is_empty() {
                check_region_isolation(before, selection, &program)
            } else {
                Err(format!(
                    "modified_nodes lists unselected nodes {}",
                    outside.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                ))
            };
            if let Err(reason) = scoped {
                return Err(Failure::Semantic(
                    RepairNeeded::semantic(reason.clone(), &scope_hint),
                    ChainError::OutOfScope { reason },
                ));
            }
            Ok(ChainOutcome::NodesModified {
                code: emit_program(&program),
                graph: ast_to_graph(&program),
                program,
                explanation: resp.get(Tag::Explanation).unwrap_or_default().to_string(),
                modified_nodes: modified,
            })
        })
    }

    /// Convert the edited flowchart back to a program and turn every
    /// pending behavior note into concrete commands.
    fn node_edits(&mut self, step: &ChainStep, edited: &FlowGraph) -> Result<RobotProgram, ChainError> {
        let env = &self.env;
        let (mut program, map) = graph_to_ast_with_map(edited).map_err(ChainError::Invalid)?;
        let mut edits = Vec::new();
        for node in edited.nodes() {
            let Some(text) = &node.pending else { continue };
            let origin = map.get(&node.id).cloned();
            let target = match &origin {
                Some(NodeOrigin::Entry) => Target::Entry,
                Some(NodeOrigin::AskQuestion(p)) => Target::Question(p.clone()),
                Some(NodeOrigin::Step(p)) if matches!(p.resolve(&program), Some(Step::Do(_))) => {
                    Target::Step(p.clone())
                }
                _ => {
                    return Err(ChainError::Invalid(Diagnostics::single(
                        Diagnostic::error(
                            Code::UnsupportedPropEdit,
                            format!("node `{}` has no command a description can change", node.id),
                        )
                        .with_nodes([node.id.as_str()]),
                    )))
                }
            };
            edits.push((target, node.id.clone(), node.label.clone(), text.clone()));
        }
        // Later paths first so earlier splices do not move them.
        edits.sort_by(|a, b| b.0.cmp(&a.0));
        for (target, id, label, description) in edits {
            let mut slots = env.base_slots();
            slots.insert("current_code".into(), emit_program(&program));
            slots.insert("node_id".into(), id.clone());
            slots.insert("node_command".into(), label);
            slots.insert("node_description".into(), description.clone());
            let user = format!("Rewrite node {id} so that it will {description}");
            let current = program.clone();
            program = env.call(&mut self.log, step, &slots, &user, |resp| {
                let body = resp.get(Tag::Code).ok_or_else(|| {
                    RepairNeeded::new(RepairReason::Missing { tag: Tag::Code })
                })?;
                let mut next = current.clone();
                target.apply(&mut next, body).map_err(|detail| {
                    Failure::Repair(RepairNeeded::new(RepairReason::InvalidBody { tag: Tag::Code, detail }))
                })?;
                env.check_places(&next)?;
                Ok(next)
            })?;
        }
        Ok(program)
    }

    fn sync(&mut self, spec: &ChainSpec, edited: &FlowGraph) -> Result<ChainOutcome, ChainError> {
        let before = self.env.ctx.program.ok_or(ChainError::NoProgram)?;
        let program = self.node_edits(&spec.steps[0], edited)?;
        let env = &self.env;
        let explanation = match spec.steps.get(1) {
            Some(explain) if program != *before => {
                let mut slots = env.base_slots();
                slots.insert("current_code".into(), emit_program(&program));
                env.call(&mut self.log, explain, &slots, "Explain the updated program.", |resp| {
                    Ok(resp
                        .get(Tag::Explanation)
                        .or_else(|| resp.answer())
                        .unwrap_or_default()
                        .to_string())
                })?
            }
            _ => String::new(),
        };
        Ok(ChainOutcome::generated(program, explanation, None))
    }
}

/// Where a node's replacement text goes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Target {
    Entry,
    Question(crate::dsl::AstPath),
    Step(crate::dsl::AstPath),
}

fn single_command(body: &str) -> Result<Command, String> {
    let lines: Vec<&str> = body.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    match lines.as_slice() {
        [line] => parse_command(line).map_err(|d| d.message),
        _ => Err(format!("expected exactly one command line, got {}", lines.len())),
    }
}

impl Target {
    fn apply(&self, program: &mut RobotProgram, body: &str) -> Result<(), String> {
        match self {
            Target::Entry => match single_command(body)? {
                Command::UserRequest(w) => program.entry = Some(w),
                other => return Err(format!("expected a `userRequest:` line, got `{}`", other.keyword())),
            },
            Target::Question(path) => match (single_command(body)?, path.resolve_mut(program)) {
                (Command::Ask(q), Some(Step::AskBranch { question, .. })) => *question = q,
                (other, _) => return Err(format!("expected one `ask:` line, got `{}`", other.keyword())),
            },
            Target::Step(path) => {
                let fragment = parse_program(body).map_err(|e| e.to_string())?;
                if fragment.entry.is_some() {
                    return Err("`userRequest:` can only start a program".into());
                }
                let (block, i) = path
                    .parent_block_mut(program)
                    .ok_or_else(|| "node no longer exists".to_string())?;
                block.splice(i..=i, fragment.body);
            }
        }
        let errors: Vec<String> = check_structure(program).into_iter().map(|d| d.message).collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors.join("; "))
        }
    }
}

/// Run one chain for one request against a session snapshot.
pub fn run_chain(
    spec: &ChainSpec,
    ctx: ChainContext<'_>,
    request: ChainRequest<'_>,
    provider: &dyn Provider,
    settings: &ChainSettings,
    cancel: &CancelToken,
) -> Result<ChainRun, ChainError> {
    let mut r = Runner {
        env: Env {
            ctx,
            provider,
            settings,
            cancel,
        },
        log: Log::default(),
    };
    let outcome = match (spec.kind, request) {
        (FunctionKind::Authoring, ChainRequest::Message(t)) => r.authoring(spec, t)?,
        (FunctionKind::ConversationalModify, ChainRequest::Message(t)) => r.modify(spec, t)?,
        (FunctionKind::MagicDebug, ChainRequest::Message(t)) => {
            if t.confirm.is_some() {
                return Err(ChainError::NotPending);
            }
            r.debug(spec, &t.text)?
        }
        (FunctionKind::MagicDebug, ChainRequest::DebugStart) => r.debug(spec, DEBUG_START_PROMPT)?,
        (FunctionKind::FlowchartSync | FunctionKind::NodePropertyEdit, ChainRequest::Sync(g)) => {
            r.sync(spec, g)?
        }
        _ => return Err(ChainError::WrongRequest),
    };
    Ok(ChainRun {
        outcome,
        repairs: r.log.repairs,
        calls: r.log.calls,
    })
}
