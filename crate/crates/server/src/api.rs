//! HTTP routes. Every state-changing call runs on the blocking pool since
//! chains and stores block.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | /sessions | | session |
//! | GET | /sessions/{id} | | session |
//! | POST | /sessions/{id}/messages | `{text, confirm?}` | `{outcome, repairs, state}` |
//! | GET | /sessions/{id}/flowchart | | `{graph, diff}` |
//! | PUT | /sessions/{id}/flowchart | renderGraph/v1 | `{outcome, repairs, state}` |
//! | POST | /sessions/{id}/magic-debug | `{nodes}` | `{outcome, repairs, state}` |
//! | DELETE | /sessions/{id}/magic-debug | | session |
//! | POST | /sessions/{id}/deploy | deploy request | `{run}` |
//! | GET | /runs/{run} | | `{run, finished, trace}` |
//! | DELETE | /runs/{run} | | `{run, finished, trace}` |
//! | WS | /sessions/{id}/events?after=N | | stream envelopes |
//!
//! Errors are `{"error": {"code", "message", "diagnostics"?}}`.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cocobo_core::flowchart::{GraphDiff, RenderGraph};
use cocobo_core::llm::{ChainError, ChainOutcome, RepairRecord, UserTurn};
use cocobo_core::session::{DeployRequest, MessageReply, ServiceError, SessionService, SessionState, StreamEnvelope};
use cocobo_core::sim::{DeployError, ExecutionTrace};
use serde::{Deserialize, Serialize};
use serde_json::json;

type Service = Arc<SessionService>;

#[derive(Debug)]
pub enum ApiError {
    Service(ServiceError),
    Internal(String),
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError::Service(e)
    }
}

fn status(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::NotFound(_) | ServiceError::NoRun(_) => StatusCode::NOT_FOUND,
        ServiceError::NoProgramYet | ServiceError::NotInDebugMode | ServiceError::NoWorld => StatusCode::CONFLICT,
        ServiceError::Chain(ChainError::ProviderTimeout) => StatusCode::GATEWAY_TIMEOUT,
        ServiceError::Chain(ChainError::Provider { .. }) => StatusCode::BAD_GATEWAY,
        ServiceError::Chain(ChainError::NotPending | ChainError::NoProgram) => StatusCode::CONFLICT,
        ServiceError::Chain(ChainError::Prompt(_)) | ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        ServiceError::Deploy(DeployError::TargetUnreachable { .. }) => StatusCode::BAD_GATEWAY,
        _ => StatusCode::UNPROCESSABLE_ENTITY,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (code, body) = match self {
            ApiError::Service(e) => {
                let mut err = json!({"code": e.code(), "message": e.to_string()});
                if let Some(d) = e.diagnostics() {
                    err["diagnostics"] = json!(d.0);
                }
                (status(&e), err)
            }
            ApiError::Internal(m) => (
                StatusCode::INTERNAL_SERVER_ERROR,
                json!({"code": "Internal", "message": m}),
            ),
        };
        (code, Json(json!({ "error": body }))).into_response()
    }
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError::Internal(e.to_string())),
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ChainReply {
    pub outcome: ChainOutcome,
    pub repairs: Vec<RepairRecord>,
    pub state: SessionState,
}

impl From<MessageReply> for ChainReply {
    fn from(r: MessageReply) -> Self {
        ChainReply {
            outcome: r.run.outcome,
            repairs: r.run.repairs,
            state: r.state,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FlowchartReply {
    pub graph: RenderGraph,
    pub diff: GraphDiff,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DebugRequest {
    pub nodes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunReply {
    pub run: String,
    #[serde(default)]
    pub finished: bool,
    #[serde(default)]
    pub trace: ExecutionTrace,
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    after: Option<u64>,
}

pub fn router(service: Service) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/flowchart", get(get_flowchart).put(sync_change))
        .route("/sessions/{id}/magic-debug", post(debug_start).delete(debug_end))
        .route("/sessions/{id}/deploy", post(deploy))
        .route("/sessions/{id}/events", get(events))
        .route("/runs/{run}", get(get_run).delete(cancel_run))
        .with_state(service)
}

async fn create_session(State(svc): State<Service>) -> Result<(StatusCode, Json<SessionState>), ApiError> {
    let state = blocking(move || svc.create_session()).await?;
    Ok((StatusCode::CREATED, Json(state)))
}

async fn get_session(State(svc): State<Service>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    Ok(Json(blocking(move || svc.get(&id)).await?))
}

async fn post_message(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Json(turn): Json<UserTurn>,
) -> Result<Json<ChainReply>, ApiError> {
    let reply = blocking(move || svc.post_message(&id, turn)).await?;
    Ok(Json(reply.into()))
}

async fn get_flowchart(State(svc): State<Service>, Path(id): Path<String>) -> Result<Json<FlowchartReply>, ApiError> {
    let (graph, diff) = blocking(move || svc.get_flowchart(&id)).await?;
    Ok(Json(FlowchartReply { graph, diff }))
}

async fn sync_change(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Json(doc): Json<RenderGraph>,
) -> Result<Json<ChainReply>, ApiError> {
    let reply = blocking(move || svc.sync_change(&id, &doc)).await?;
    Ok(Json(reply.into()))
}

async fn debug_start(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Json(req): Json<DebugRequest>,
) -> Result<Json<ChainReply>, ApiError> {
    let reply = blocking(move || svc.magic_debug_start(&id, req.nodes)).await?;
    Ok(Json(reply.into()))
}

async fn debug_end(State(svc): State<Service>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    Ok(Json(blocking(move || svc.magic_debug_end(&id)).await?))
}

async fn deploy(
    State(svc): State<Service>,
    Path(id): Path<String>,
    body: Option<Json<DeployRequest>>,
) -> Result<(StatusCode, Json<RunReply>), ApiError> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let (run, _) = blocking(move || svc.deploy(&id, req)).await?;
    let reply = RunReply {
        run,
        finished: false,
        trace: ExecutionTrace::default(),
    };
    Ok((StatusCode::ACCEPTED, Json(reply)))
}

async fn get_run(State(svc): State<Service>, Path(run): Path<String>) -> Result<Json<RunReply>, ApiError> {
    let h = blocking({
        let run = run.clone();
        move || svc.run_handle(&run)
    })
    .await?;
    Ok(Json(RunReply {
        run,
        finished: h.is_finished(),
        trace: h.trace(),
    }))
}

async fn cancel_run(State(svc): State<Service>, Path(run): Path<String>) -> Result<Json<RunReply>, ApiError> {
    let h = blocking({
        let run = run.clone();
        move || {
            let h = svc.run_handle(&run)?;
            h.cancel();
            h.wait_timeout(Duration::from_secs(5));
            Ok(h)
        }
    })
    .await?;
    Ok(Json(RunReply {
        run,
        finished: h.is_finished(),
        trace: h.trace(),
    }))
}

async fn events(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<EventsQuery>,
    ws: WebSocketUpgrade,
) -> Result<Response, ApiError> {
    let rx = blocking(move || svc.subscribe(&id, q.after)).await?;
    Ok(ws.on_upgrade(move |socket| forward(socket, rx)))
}

/// Pump envelopes from the service's channel into the socket until either
/// side goes away.
async fn forward(mut socket: WebSocket, rx: crossbeam_channel::Receiver<StreamEnvelope>) {
    let (tx, mut out) = tokio::sync::mpsc::unbounded_channel::<String>();
    std::thread::spawn(move || loop {
        match rx.recv_timeout(Duration::from_millis(200)) {
            Ok(env) => {
                let text = serde_json::to_string(&env).expect("envelopes serialize");
                if tx.send(text).is_err() {
                    return;
                }
            }
            Err(crossbeam_channel::RecvTimeoutError::Timeout) if !tx.is_closed() => {}
            Err(_) => return,
        }
    });
    loop {
        tokio::select! {
            next = out.recv() => match next {
                Some(text) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        return;
                    }
                }
                None => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
        }
    }
}
