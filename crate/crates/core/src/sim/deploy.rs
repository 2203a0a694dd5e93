use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{Receiver, Sender};
use parking_lot::{Condvar, Mutex};

use super::bridge::{BridgeRobot, WsTransport};
use super::events::EventScript;
use super::interp::{run_on_port, RunOptions, SimError};
use super::robot::{PortError, RobotPort, SimRobot};
use super::trace::{ExecutionTrace, TraceEvent};
use super::world::WorldModel;
use crate::cancel::CancelToken;
use crate::diagnostic::{Diagnostic, Diagnostics};
use crate::dsl::{validate_program, RobotProgram, WorldCatalog};

#[derive(Debug, Clone)]
pub enum DeployTarget {
    Simulated { world: WorldModel, script: EventScript },
    /// A bridge endpoint such as `ws://127.0.0.1:9000/`.
    Bridge { address: String },
}

#[derive(Debug, Clone, Copy)]
pub struct DeployOptions {
    pub run: RunOptions,
    /// Real milliseconds per virtual millisecond on a simulated target.
    pub time_scale: Option<f64>,
    pub connect_timeout: Duration,
}

impl Default for DeployOptions {
    fn default() -> Self {
        DeployOptions {
            run: RunOptions::default(),
            time_scale: None,
            connect_timeout: Duration::from_secs(2),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DeployError {
    #[error("program is not valid for this robot: {0}")]
    Invalid(Diagnostics),
    #[error("robot at {address} is unreachable: {reason}")]
    TargetUnreachable { address: String, reason: String },
}

#[derive(Default)]
struct Shared {
    events: Vec<TraceEvent>,
    subscribers: Vec<Sender<TraceEvent>>,
    result: Option<Result<ExecutionTrace, SimError>>,
}

/// A program running on a robot.
#[derive(Clone)]
pub struct RunHandle {
    shared: Arc<(Mutex<Shared>, Condvar)>,
    cancel: CancelToken,
}

impl RunHandle {
    /// All events so far followed by live ones. The channel closes when the
    /// run ends.
    pub fn subscribe(&self) -> Receiver<TraceEvent> {
        let (tx, rx) = crossbeam_channel::unbounded();
        let mut s = self.shared.0.lock();
        for e in &s.events {
            let _ = tx.send(e.clone());
        }
        if s.result.is_none() {
            s.subscribers.push(tx);
        }
        rx
    }

    pub fn cancel(&self) {
        self.cancel.cancel();
    }

    pub fn is_finished(&self) -> bool {
        self.shared.0.lock().result.is_some()
    }

    /// Events emitted so far.
    pub fn trace(&self) -> ExecutionTrace {
        ExecutionTrace(self.shared.0.lock().events.clone())
    }

    pub fn wait(&self) -> Result<ExecutionTrace, SimError> {
        let (lock, cv) = &*self.shared;
        let mut s = lock.lock();
        while s.result.is_none() {
            cv.wait(&mut s);
        }
        s.result.clone().expect("checked above")
    }

    pub fn wait_timeout(&self, timeout: Duration) -> Option<Result<ExecutionTrace, SimError>> {
        let (lock, cv) = &*self.shared;
        let mut s = lock.lock();
        if s.result.is_none() {
            cv.wait_for(&mut s, timeout);
        }
        s.result.clone()
    }
}

fn check(program: &RobotProgram, catalog: &WorldCatalog) -> Result<(), DeployError> {
    let errors: Vec<Diagnostic> = validate_program(program, catalog)
        .into_iter()
        .filter(Diagnostic::is_error)
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(DeployError::Invalid(Diagnostics(errors)))
    }
}

/// Start a program and return at once. Bridge targets are connected and
/// greeted before this returns.
pub fn deploy(program: &RobotProgram, target: DeployTarget, opts: DeployOptions) -> Result<RunHandle, DeployError> {
    let port: Box<dyn RobotPort + Send> = match target {
        DeployTarget::Simulated { world, script } => {
            check(program, &world.catalog())?;
            Box::new(SimRobot::new(world, &script).paced(opts.time_scale))
        }
        DeployTarget::Bridge { address } => {
            let unreachable = |e: PortError| DeployError::TargetUnreachable {
                address: address.clone(),
                reason: e.to_string(),
            };
            let transport = WsTransport::connect(&address, opts.connect_timeout).map_err(unreachable)?;
            let robot = BridgeRobot::connect(transport, opts.connect_timeout).map_err(unreachable)?;
            check(program, &WorldCatalog::new(robot.places().iter().cloned()))?;
            Box::new(robot)
        }
    };
    Ok(spawn(program.clone(), port, opts.run))
}

fn spawn(program: RobotProgram, mut port: Box<dyn RobotPort + Send>, run: RunOptions) -> RunHandle {
    let handle = RunHandle {
        shared: Arc::new((Mutex::new(Shared::default()), Condvar::new())),
        cancel: CancelToken::new(),
    };
    let h = handle.clone();
    std::thread::spawn(move || {
        let (lock, cv) = &*h.shared;
        let mut sink = |e: &TraceEvent| {
            let mut s = lock.lock();
            s.events.push(e.clone());
            s.subscribers.retain(|tx| tx.send(e.clone()).is_ok());
        };
        let result = run_on_port(&program, port.as_mut(), run, &h.cancel, &mut sink);
        let mut s = lock.lock();
        s.result = Some(result);
        s.subscribers.clear();
        cv.notify_all();
    });
    handle
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;
    use crate::sim::trace::{validate_trace, TraceEntry};
    use std::time::Instant;

    fn world() -> WorldModel {
        WorldModel::parse(
            r#"{"schema":"world/v1","start":"A","speed":1.0,
                "places":[{"name":"A","x":0,"y":0},{"name":"B","x":30,"y":40}]}"#,
        )
        .unwrap()
    }

    fn sim() -> DeployTarget {
        DeployTarget::Simulated {
            world: world(),
            script: EventScript::default(),
        }
    }

    #[test]
    fn cancel_right_away_settles() {
        let p = parse_program("goto: B\ngoto: A\nsay: done").unwrap();
        let opts = DeployOptions {
            time_scale: Some(1.0),
            ..DeployOptions::default()
        };
        let h = deploy(&p, sim(), opts).unwrap();
        h.cancel();
        let t = h.wait().unwrap();
        validate_trace(&t.0).unwrap();
        match t.terminal() {
            Some(TraceEntry::Cancelled { place }) => assert!(["A", "B"].contains(&place.as_str())),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn subscription_sees_everything() {
        let p = parse_program("goto: B\nsay: done").unwrap();
        let started = Instant::now();
        let h = deploy(&p, sim(), DeployOptions::default()).unwrap();
        assert!(started.elapsed() < Duration::from_millis(50));
        let t = h.wait().unwrap();
        let seen: Vec<_> = h.subscribe().iter().collect();
        assert_eq!(seen, t.0);
    }

    #[test]
    fn invalid_and_unreachable() {
        let p = parse_program("goto: Mars").unwrap();
        assert!(matches!(deploy(&p, sim(), DeployOptions::default()), Err(DeployError::Invalid(_))));
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let target = DeployTarget::Bridge {
            address: format!("ws://{addr}/"),
        };
        let p = parse_program("say: hi").unwrap();
        assert!(matches!(
            deploy(&p, target, DeployOptions::default()),
            Err(DeployError::TargetUnreachable { .. })
        ));
    }
}
