//! Python bindings. Structured values cross the boundary as plain Python
//! objects decoded from the same JSON the HTTP API uses.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use cocobo_core::dsl::{emit_program, parse_program, validate_program, RobotProgram, WorldCatalog};
use cocobo_core::flowchart::{
    ast_to_graph, emit_mermaid, graph_to_ast, graph_to_render_json, parse_mermaid, render_json_to_graph,
    RenderGraph,
};
use cocobo_core::llm::{ChainSettings, Script, ScriptedProvider, UserTurn};
use cocobo_core::session::{
    run_transcript, DeployRequest, MemoryStore, ServiceConfig, SessionService, Transcript,
};
use cocobo_core::sim::bridge::{serve_bridge, BridgeOptions, BridgeServer as CoreBridge};
use cocobo_core::sim::{run_program, EventScript, WorldModel};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::Serialize;

create_exception!(cocobo, CocoboError, PyException, "Any failure reported by cocobo.");

fn err(e: impl std::fmt::Display) -> PyErr {
    CocoboError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Accept either a JSON string or a Python object that `json.dumps` can
/// serialize.
fn from_py<T: serde::de::DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = match obj.extract::<String>() {
        Ok(s) => s,
        Err(_) => obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?,
    };
    serde_json::from_str(&text).map_err(err)
}

/// A parsed CocoScript program.
#[pyclass(frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct Program {
    inner: RobotProgram,
}

#[pymethods]
impl Program {
    #[new]
    fn new(code: &str) -> PyResult<Self> {
        parse_program(code).map(|inner| Program { inner }).map_err(err)
    }

    #[staticmethod]
    fn from_mermaid(text: &str) -> PyResult<Self> {
        let g = parse_mermaid(text).map_err(err)?;
        graph_to_ast(&g).map(|inner| Program { inner }).map_err(err)
    }

    /// From a renderGraph/v1 document (string or dict).
    #[staticmethod]
    fn from_render_json(doc: &Bound<'_, PyAny>) -> PyResult<Self> {
        let doc: RenderGraph = from_py(doc)?;
        let g = render_json_to_graph(&doc).map_err(err)?;
        graph_to_ast(&g).map(|inner| Program { inner }).map_err(err)
    }

    /// Canonical program text.
    fn code(&self) -> String {
        emit_program(&self.inner)
    }

    fn mermaid(&self) -> String {
        emit_mermaid(&ast_to_graph(&self.inner))
    }

    fn render_json<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &graph_to_render_json(&ast_to_graph(&self.inner)))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }

    /// Diagnostics as dicts; `places` enables the unknown-place check.
    #[pyo3(signature = (places=None))]
    fn validate<'py>(&self, py: Python<'py>, places: Option<Vec<String>>) -> PyResult<Bound<'py, PyAny>> {
        let catalog = WorldCatalog::new(places.unwrap_or_default());
        to_py(py, &validate_program(&self.inner, &catalog))
    }

    /// True when code, Mermaid and render JSON all convert back to this
    /// program.
    fn roundtrips(&self) -> bool {
        let g = ast_to_graph(&self.inner);
        let code = parse_program(&emit_program(&self.inner)).is_ok_and(|p| p == self.inner);
        let mmd = parse_mermaid(&emit_mermaid(&g)).is_ok_and(|h| h == g);
        let json = render_json_to_graph(&graph_to_render_json(&g)).is_ok_and(|h| h == g);
        code && mmd && json && graph_to_ast(&g).is_ok_and(|p| p == self.inner)
    }

    fn __repr__(&self) -> String {
        format!("Program({:?})", emit_program(&self.inner))
    }
}

#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct World {
    inner: WorldModel,
}

#[pymethods]
impl World {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        WorldModel::load(&path).map(|inner| World { inner }).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        WorldModel::parse(text).map(|inner| World { inner }).map_err(err)
    }

    #[getter]
    fn places(&self) -> Vec<String> {
        self.inner.places.iter().map(|p| p.name.clone()).collect()
    }
}

/// Scripted sensor events.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone, Default)]
struct Events {
    inner: EventScript,
}

#[pymethods]
impl Events {
    #[new]
    fn new() -> Self {
        Events::default()
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        EventScript::load(&path).map(|inner| Events { inner }).map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        EventScript::parse(text).map(|inner| Events { inner }).map_err(err)
    }
}

/// Run a program in the simulator; returns the trace as a list of dicts.
#[pyfunction]
#[pyo3(signature = (program, world, events=None, ask_timeout_ms=10_000))]
fn run<'py>(
    py: Python<'py>,
    program: &Program,
    world: &World,
    events: Option<&Events>,
    ask_timeout_ms: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let events = events.map(|e| e.inner.clone()).unwrap_or_default();
    let trace = run_program(&program.inner, &world.inner, &events, ask_timeout_ms).map_err(err)?;
    to_py(py, &trace)
}

/// Replay a recorded authoring session against a scripted model and
/// return the final program text.
#[pyfunction]
#[pyo3(signature = (script, transcript, world=None))]
fn author(script: PathBuf, transcript: PathBuf, world: Option<&World>) -> PyResult<String> {
    let svc = Service::build(&script, world, 2)?;
    let t = Transcript::load(&transcript).map_err(err)?;
    let run = run_transcript(&svc.inner, &t).map_err(err)?;
    run.final_code().ok_or_else(|| err("the session ended without a program"))
}

/// A simulated robot served over the WebSocket bridge.
#[pyclass(frozen)]
struct BridgeServer {
    inner: Mutex<Option<CoreBridge>>,
    url: String,
}

#[pymethods]
impl BridgeServer {
    #[new]
    #[pyo3(signature = (world, events=None, addr="127.0.0.1:0", time_scale=None))]
    fn new(world: &World, events: Option<&Events>, addr: &str, time_scale: Option<f64>) -> PyResult<Self> {
        let events = events.map(|e| e.inner.clone()).unwrap_or_default();
        let server = serve_bridge(world.inner.clone(), events, addr, BridgeOptions { time_scale }).map_err(err)?;
        Ok(BridgeServer {
            url: server.url(),
            inner: Mutex::new(Some(server)),
        })
    }

    #[getter]
    fn url(&self) -> String {
        self.url.clone()
    }

    fn shutdown(&self) {
        if let Some(s) = self.inner.lock().expect("bridge lock").take() {
            s.shutdown();
        }
    }
}

/// In-memory session service backed by a scripted model.
#[pyclass(frozen)]
struct Service {
    inner: Arc<SessionService>,
}

impl Service {
    fn build(script: &std::path::Path, world: Option<&World>, retries: u32) -> PyResult<Self> {
        let provider = Arc::new(ScriptedProvider::new(Script::load(script).map_err(err)?));
        let config = ServiceConfig {
            settings: ChainSettings {
                max_repair_retries: retries,
                ..ChainSettings::default()
            },
            world: world.map(|w| w.inner.clone()),
            ..ServiceConfig::default()
        };
        Ok(Service {
            inner: Arc::new(SessionService::new(Arc::new(MemoryStore::new()), provider, config)),
        })
    }
}

#[pymethods]
impl Service {
    #[new]
    #[pyo3(signature = (script, world=None, max_repair_retries=2))]
    fn new(script: PathBuf, world: Option<&World>, max_repair_retries: u32) -> PyResult<Self> {
        Service::build(&script, world, max_repair_retries)
    }

    fn create_session(&self) -> PyResult<String> {
        self.inner.create_session().map(|s| s.id).map_err(err)
    }

    fn get<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.get(id).map_err(err)?)
    }

    /// Returns `{"outcome", "state"}`.
    #[pyo3(signature = (id, text, confirm=None))]
    fn post_message<'py>(
        &self,
        py: Python<'py>,
        id: &str,
        text: String,
        confirm: Option<bool>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.post_message(id, UserTurn { text, confirm }).map_err(err)?;
        to_py(py, &serde_json::json!({"outcome": r.run.outcome, "state": r.state}))
    }

    /// Returns `{"graph", "diff"}`.
    fn flowchart<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        let (graph, diff) = self.inner.get_flowchart(id).map_err(err)?;
        to_py(py, &serde_json::json!({"graph": graph, "diff": diff}))
    }

    fn sync_change<'py>(&self, py: Python<'py>, id: &str, doc: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let doc: RenderGraph = from_py(doc)?;
        let r = self.inner.sync_change(id, &doc).map_err(err)?;
        to_py(py, &serde_json::json!({"outcome": r.run.outcome, "state": r.state}))
    }

    fn magic_debug_start<'py>(&self, py: Python<'py>, id: &str, nodes: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
        let r = self.inner.magic_debug_start(id, nodes).map_err(err)?;
        to_py(py, &serde_json::json!({"outcome": r.run.outcome, "state": r.state}))
    }

    fn magic_debug_end<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.magic_debug_end(id).map_err(err)?)
    }

    /// Run the session's program on `world` and wait for the trace.
    #[pyo3(signature = (id, world, events=None))]
    fn deploy<'py>(&self, py: Python<'py>, id: &str, world: &World, events: Option<&Events>) -> PyResult<Bound<'py, PyAny>> {
        let req = DeployRequest::SimulatedWith {
            world: world.inner.clone(),
            events: events.map(|e| e.inner.clone()).unwrap_or_default(),
        };
        let (_, handle) = self.inner.deploy(id, req).map_err(err)?;
        let trace = py.detach(|| handle.wait()).map_err(err)?;
        to_py(py, &trace)
    }
}

#[pymodule]
fn cocobo(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CocoboError", m.py().get_type::<CocoboError>())?;
    m.add_class::<Program>()?;
    m.add_class::<World>()?;
    m.add_class::<Events>()?;
    m.add_class::<Service>()?;
    m.add_class::<BridgeServer>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(author, m)?)?;
    Ok(())
}
