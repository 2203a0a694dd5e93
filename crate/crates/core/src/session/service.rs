use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use crossbeam_channel::{Receiver, Sender};
use parking_lot::{Condvar, Mutex, RwLock};
use serde::{Deserialize, Serialize};

use super::state::{Mode, SessionEvent, SessionState};
use super::store::{EventLogRecord, SessionStore, StorageError, LOG_VERSION};
use crate::cancel::CancelToken;
use crate::diagnostic::Diagnostics;
use crate::flowchart::{graph_to_render_json, render_json_to_graph, FlowGraph, GraphDiff, RenderGraph};
use crate::llm::{
    run_chain, ChainContext, ChainError, ChainOutcome, ChainRequest, ChainRun, ChainSettings, ChainSpec,
    FunctionKind, Provider, UserTurn,
};
use crate::sim::{
    deploy, DeployError, DeployOptions, DeployTarget, EventScript, ExecutionTrace, RunHandle, TraceEvent, WorldModel,
};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("there is no program yet")]
    NoProgramYet,
    #[error("the session is not in debug mode")]
    NotInDebugMode,
    #[error("unknown node ids: {}", .0.join(", "))]
    UnknownNodes(Vec<String>),
    #[error("select at least one node")]
    EmptySelection,
    #[error("{0}")]
    Invalid(Diagnostics),
    #[error("no simulated world is configured")]
    NoWorld,
    #[error("no run `{0}`")]
    NoRun(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Deploy(#[from] DeployError),
}

impl ServiceError {
    /// Stable short code used in API responses.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotFound(_) => "NotFound",
            ServiceError::NoProgramYet => "NoProgramYet",
            ServiceError::NotInDebugMode => "NotInDebugMode",
            ServiceError::UnknownNodes(_) => "UnknownNodeId",
            ServiceError::EmptySelection => "EmptySelection",
            ServiceError::Invalid(d) => d.0.first().map_or("Invalid", |d| d.code.as_str()),
            ServiceError::NoWorld => "NoWorld",
            ServiceError::NoRun(_) => "NotFound",
            ServiceError::Chain(e) => e.code(),
            ServiceError::Storage(_) => "StorageError",
            ServiceError::Deploy(DeployError::TargetUnreachable { .. }) => "TargetUnreachable",
            ServiceError::Deploy(DeployError::Invalid(d)) => d.0.first().map_or("Invalid", |d| d.code.as_str()),
        }
    }

    pub fn diagnostics(&self) -> Option<&Diagnostics> {
        match self {
            ServiceError::Invalid(d)
            | ServiceError::Chain(ChainError::Invalid(d))
            | ServiceError::Deploy(DeployError::Invalid(d)) => Some(d),
            _ => None,
        }
    }
}

/// Pushed to a session's event stream subscribers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamEnvelope {
    /// Dense per session while the service runs.
    pub seq: u64,
    pub session: String,
    #[serde(flatten)]
    pub body: StreamBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum StreamBody {
    Outcome { outcome: ChainOutcome },
    Diff { diff: GraphDiff },
    Mode { mode: Mode },
    Trace { run: String, event: TraceEvent },
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub settings: ChainSettings,
    /// Places the chains may use. Taken from `world` when empty.
    pub places: Vec<String>,
    /// World and sensor script used by simulated deploys.
    pub world: Option<WorldModel>,
    pub events: EventScript,
    pub deploy: DeployOptions,
    pub snapshot_every: u64,
    /// Stream envelopes kept per session for late subscribers.
    pub stream_history: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            settings: ChainSettings::default(),
            places: Vec::new(),
            world: None,
            events: EventScript::default(),
            deploy: DeployOptions::default(),
            snapshot_every: 50,
            stream_history: 1000,
        }
    }
}

/// Admits holders strictly in arrival order.
#[derive(Default)]
struct Fifo {
    next: AtomicU64,
    serving: Mutex<u64>,
    cv: Condvar,
}

struct FifoGuard<'a>(&'a Fifo);

impl Fifo {
    fn enter(&self) -> FifoGuard<'_> {
        let ticket = self.next.fetch_add(1, Ordering::SeqCst);
        let mut serving = self.serving.lock();
        while *serving != ticket {
            self.cv.wait(&mut serving);
        }
        FifoGuard(self)
    }
}

impl Drop for FifoGuard<'_> {
    fn drop(&mut self) {
        *self.0.serving.lock() += 1;
        self.0.cv.notify_all();
    }
}

#[derive(Default)]
struct Stream {
    next: u64,
    history: VecDeque<StreamEnvelope>,
    subscribers: Vec<Sender<StreamEnvelope>>,
}

struct Slot {
    queue: Fifo,
    state: RwLock<SessionState>,
    stream: Mutex<Stream>,
}

impl Slot {
    fn publish(&self, session: &str, body: StreamBody, history: usize) {
        let mut s = self.stream.lock();
        s.next += 1;
        let env = StreamEnvelope {
            seq: s.next,
            session: session.to_string(),
            body,
        };
        s.subscribers.retain(|tx| tx.send(env.clone()).is_ok());
        s.history.push_back(env);
        while s.history.len() > history {
            s.history.pop_front();
        }
    }
}

pub struct SessionService {
    store: Arc<dyn SessionStore>,
    provider: Arc<dyn Provider>,
    config: ServiceConfig,
    places: Vec<String>,
    slots: Mutex<HashMap<String, Arc<Slot>>>,
    runs: Mutex<HashMap<String, RunHandle>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// What a `post_message` call produced.
#[derive(Debug, Clone)]
pub struct MessageReply {
    pub run: ChainRun,
    pub state: SessionState,
}

/// Where a session's program should run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "camelCase")]
pub enum DeployRequest {
    /// The configured world and sensor script.
    #[default]
    Simulated,
    #[serde(rename_all = "camelCase")]
    SimulatedWith {
        world: WorldModel,
        #[serde(default)]
        events: EventScript,
    },
    Bridge { address: String },
}

impl SessionService {
    pub fn new(store: Arc<dyn SessionStore>, provider: Arc<dyn Provider>, config: ServiceConfig) -> Self {
        let places = if config.places.is_empty() {
            config
                .world
                .as_ref()
                .map(|w| w.places.iter().map(|p| p.name.clone()).collect())
                .unwrap_or_default()
        } else {
            config.places.clone()
        };
        SessionService {
            store,
            provider,
            config,
            places,
            slots: Mutex::new(HashMap::new()),
            runs: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn places(&self) -> &[String] {
        &self.places
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ServiceError> {
        if let Some(s) = self.slots.lock().get(id) {
            return Ok(s.clone());
        }
        let records = self.store.records(id)?;
        if records.is_empty() {
            return Err(ServiceError::NotFound(id.to_string()));
        }
        let state = self.store.restore(id)?;
        let mut slots = self.slots.lock();
        let slot = slots.entry(id.to_string()).or_insert_with(|| {
            Arc::new(Slot {
                queue: Fifo::default(),
                state: RwLock::new(state),
                stream: Mutex::new(Stream::default()),
            })
        });
        Ok(slot.clone())
    }

    /// Persist events, then make the new state visible.
    fn commit(&self, slot: &Slot, events: Vec<SessionEvent>) -> Result<SessionState, ServiceError> {
        let mut next = slot.state.read().clone();
        let at = now_ms();
        let records: Vec<EventLogRecord> = events
            .into_iter()
            .enumerate()
            .map(|(i, event)| EventLogRecord {
                v: LOG_VERSION,
                session: next.id.clone(),
                seq: next.seq + 1 + i as u64,
                at,
                event,
            })
            .collect();
        self.store.append(&records)?;
        let before = next.seq;
        for r in &records {
            next.apply(&r.event);
            next.seq = r.seq;
        }
        let every = self.config.snapshot_every.max(1);
        if next.seq / every > before / every {
            if let Err(e) = self.store.save_snapshot(&next) {
                log::warn!("snapshot of {} failed: {e}", next.id);
            }
        }
        *slot.state.write() = next.clone();
        Ok(next)
    }

    fn publish(&self, slot: &Slot, session: &str, body: StreamBody) {
        slot.publish(session, body, self.config.stream_history);
    }

    fn publish_outcome(&self, slot: &Slot, state: &SessionState, outcome: &ChainOutcome) {
        self.publish(slot, &state.id, StreamBody::Outcome { outcome: outcome.clone() });
        if outcome.program().is_some() {
            if let Some(diff) = &state.last_diff {
                self.publish(slot, &state.id, StreamBody::Diff { diff: diff.clone() });
            }
        }
    }

    /// Envelopes after `after` that are still buffered, then live ones.
    pub fn subscribe(&self, id: &str, after: Option<u64>) -> Result<Receiver<StreamEnvelope>, ServiceError> {
        let slot = self.slot(id)?;
        let (tx, rx) = crossbeam_channel::unbounded();
        let mut s = slot.stream.lock();
        for env in s.history.iter().filter(|e| after.is_none_or(|a| e.seq > a)) {
            let _ = tx.send(env.clone());
        }
        s.subscribers.push(tx);
        Ok(rx)
    }

    pub fn create_session(&self) -> Result<SessionState, ServiceError> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let slot = Arc::new(Slot {
            queue: Fifo::default(),
            state: RwLock::new(SessionState::new(id.clone())),
            stream: Mutex::new(Stream::default()),
        });
        let state = self.commit(&slot, vec![SessionEvent::Created { id: id.clone() }])?;
        self.slots.lock().insert(id, slot);
        Ok(state)
    }

    pub fn get(&self, id: &str) -> Result<SessionState, ServiceError> {
        Ok(self.slot(id)?.state.read().clone())
    }

    pub fn session_ids(&self) -> Result<Vec<String>, ServiceError> {
        Ok(self.store.sessions()?)
    }

    fn run(
        &self,
        state: &SessionState,
        kind: FunctionKind,
        selection: &[String],
        request: ChainRequest<'_>,
    ) -> Result<ChainRun, ChainError> {
        let ctx = ChainContext {
            transcript: &state.transcript,
            requirements: state.requirements.as_ref(),
            program: state.program.as_ref(),
            places: &self.places,
            selection,
        };
        let spec = ChainSpec::builtin(kind);
        run_chain(
            &spec,
            ctx,
            request,
            self.provider.as_ref(),
            &self.config.settings,
            &CancelToken::new(),
        )
    }

    /// Route a chat turn by mode and program presence.
    pub fn post_message(&self, id: &str, turn: UserTurn) -> Result<MessageReply, ServiceError> {
        let slot = self.slot(id)?;
        let _turn = slot.queue.enter();
        let state = slot.state.read().clone();
        let kind = match (&state.mode, &state.program) {
            (Mode::MagicDebug { .. }, _) => FunctionKind::MagicDebug,
            (Mode::Normal, None) => FunctionKind::Authoring,
            (Mode::Normal, Some(_)) => FunctionKind::ConversationalModify,
        };
        let run = self.run(&state, kind, state.mode.selection(), ChainRequest::Message(&turn))?;
        let state = self.commit(
            &slot,
            vec![
                SessionEvent::UserTurn { turn },
                SessionEvent::Outcome {
                    outcome: run.outcome.clone(),
                },
            ],
        )?;
        self.publish_outcome(&slot, &state, &run.outcome);
        Ok(MessageReply { run, state })
    }

    pub fn get_flowchart(&self, id: &str) -> Result<(RenderGraph, GraphDiff), ServiceError> {
        let state = self.get(id)?;
        let graph = state.graph.as_ref().ok_or(ServiceError::NoProgramYet)?;
        Ok((graph_to_render_json(graph), state.last_diff.clone().unwrap_or_default()))
    }

    /// Sync Change: turn the edited flowchart back into the program.
    pub fn sync_change(&self, id: &str, edited: &RenderGraph) -> Result<MessageReply, ServiceError> {
        let slot = self.slot(id)?;
        let _turn = slot.queue.enter();
        let state = slot.state.read().clone();
        let current = state.graph.as_ref().ok_or(ServiceError::NoProgramYet)?;
        let edited = render_json_to_graph(edited).map_err(ServiceError::Invalid)?;
        let edited = drop_stale_notes(edited, current);
        let run = self.run(&state, FunctionKind::FlowchartSync, &[], ChainRequest::Sync(&edited))?;
        let state = self.commit(
            &slot,
            vec![
                SessionEvent::Synced { edited },
                SessionEvent::Outcome {
                    outcome: run.outcome.clone(),
                },
            ],
        )?;
        self.publish_outcome(&slot, &state, &run.outcome);
        Ok(MessageReply { run, state })
    }

    /// Enter debug mode on the selected nodes and explain them.
    pub fn magic_debug_start(&self, id: &str, nodes: Vec<String>) -> Result<MessageReply, ServiceError> {
        let slot = self.slot(id)?;
        let _turn = slot.queue.enter();
        let state = slot.state.read().clone();
        let graph = state.graph.as_ref().ok_or(ServiceError::NoProgramYet)?;
        if nodes.is_empty() {
            return Err(ServiceError::EmptySelection);
        }
        let unknown: Vec<String> = nodes.iter().filter(|n| graph.node(n).is_none()).cloned().collect();
        if !unknown.is_empty() {
            return Err(ServiceError::UnknownNodes(unknown));
        }
        let run = self.run(&state, FunctionKind::MagicDebug, &nodes, ChainRequest::DebugStart)?;
        let state = self.commit(
            &slot,
            vec![
                SessionEvent::DebugStarted { selected: nodes },
                SessionEvent::Outcome {
                    outcome: run.outcome.clone(),
                },
            ],
        )?;
        self.publish(&slot, &state.id, StreamBody::Mode { mode: state.mode.clone() });
        self.publish_outcome(&slot, &state, &run.outcome);
        Ok(MessageReply { run, state })
    }

    pub fn magic_debug_end(&self, id: &str) -> Result<SessionState, ServiceError> {
        let slot = self.slot(id)?;
        let _turn = slot.queue.enter();
        if slot.state.read().mode == Mode::Normal {
            return Err(ServiceError::NotInDebugMode);
        }
        let state = self.commit(&slot, vec![SessionEvent::DebugEnded])?;
        self.publish(&slot, &state.id, StreamBody::Mode { mode: state.mode.clone() });
        Ok(state)
    }

    /// Start the session's program; trace events are forwarded to the
    /// session's stream.
    pub fn deploy(&self, id: &str, request: DeployRequest) -> Result<(String, RunHandle), ServiceError> {
        let slot = self.slot(id)?;
        let _turn = slot.queue.enter();
        let state = slot.state.read().clone();
        let program = state.program.as_ref().ok_or(ServiceError::NoProgramYet)?;
        let (target, label) = match request {
            DeployRequest::Simulated => {
                let world = self.config.world.clone().ok_or(ServiceError::NoWorld)?;
                let script = self.config.events.clone();
                (DeployTarget::Simulated { world, script }, "simulated".to_string())
            }
            DeployRequest::SimulatedWith { world, events } => (
                DeployTarget::Simulated { world, script: events },
                "simulated".to_string(),
            ),
            DeployRequest::Bridge { address } => (DeployTarget::Bridge { address: address.clone() }, address),
        };
        let handle = deploy(program, target, self.config.deploy)?;
        let run = uuid::Uuid::new_v4().simple().to_string();
        self.commit(
            &slot,
            vec![SessionEvent::Deployed {
                run: run.clone(),
                target: label,
            }],
        )?;
        self.runs.lock().insert(run.clone(), handle.clone());
        let events = handle.subscribe();
        let (slot2, session, run2) = (slot.clone(), id.to_string(), run.clone());
        let history = self.config.stream_history;
        std::thread::spawn(move || {
            for event in events.iter() {
                let body = StreamBody::Trace {
                    run: run2.clone(),
                    event,
                };
                slot2.publish(&session, body, history);
            }
        });
        Ok((run, handle))
    }

    pub fn run_handle(&self, run: &str) -> Result<RunHandle, ServiceError> {
        self.runs.lock().get(run).cloned().ok_or_else(|| ServiceError::NoRun(run.to_string()))
    }

    pub fn cancel_run(&self, run: &str) -> Result<ExecutionTrace, ServiceError> {
        let h = self.run_handle(run)?;
        h.cancel();
        Ok(h.trace())
    }
}

/// A note equal to the node's description before editing is not an edit:
/// it was carried along when the user changed the node's command instead.
pub fn drop_stale_notes(edited: FlowGraph, before: &FlowGraph) -> FlowGraph {
    let (mut nodes, edges) = edited.into_parts();
    for n in &mut nodes {
        let stale = match (&n.pending, before.node(&n.id)) {
            (Some(note), Some(old)) => *note == old.kind.describe(),
            _ => false,
        };
        if stale {
            n.pending = None;
        }
    }
    FlowGraph::new(nodes, edges)
}
