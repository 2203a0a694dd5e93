//! Simulated service robot: worlds, scripted sensor events, the program
//! interpreter, the WebSocket bridge and asynchronous deployment.

pub mod bridge;
mod deploy;
mod events;
mod interp;
mod robot;
mod trace;
mod world;

pub use deploy::{deploy, DeployError, DeployOptions, DeployTarget, RunHandle};
pub use events::{EventScript, ExternalEvent, TimedEvent, EVENTS_SCHEMA};
pub use interp::{run_on_port, run_program, RunOptions, SimError};
pub use robot::{PortError, RobotPort, SimRobot};
pub use trace::{validate_trace, ExecutionTrace, TraceEntry, TraceEvent};
pub use world::{Place, WorldError, WorldModel, WORLD_SCHEMA};
