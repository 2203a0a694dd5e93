use super::events::EventScript;
use super::robot::{PortError, RobotPort, SimRobot};
use super::trace::{ExecutionTrace, TraceEntry, TraceEvent};
use super::world::WorldModel;
use crate::cancel::CancelToken;
use crate::dsl::{fold, AstPath, Block, Branch, Command, RobotProgram, Step, DEFAULT_ARM};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// How long an `ask` waits for a reply, in virtual ms.
    pub ask_timeout_ms: u64,
    /// The run stops with `TimedOut` once the clock passes this.
    pub max_virtual_ms: u64,
    /// The run stops with `TimedOut` after this many robot actions.
    pub max_actions: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            ask_timeout_ms: 10_000,
            max_virtual_ms: 86_400_000,
            max_actions: 10_000,
        }
    }
}

/// Run a program on a fresh simulated robot and return the whole trace.
pub fn run_program(
    program: &RobotProgram,
    world: &WorldModel,
    script: &EventScript,
    ask_timeout_ms: u64,
) -> Result<ExecutionTrace, SimError> {
    let opts = RunOptions {
        ask_timeout_ms,
        ..RunOptions::default()
    };
    let mut robot = SimRobot::new(world.clone(), script);
    run_on_port(program, &mut robot, opts, &CancelToken::new(), &mut |_| {})
}

/// Run a program against any robot, handing each trace event to `sink` as
/// soon as it happens.
pub fn run_on_port(
    program: &RobotProgram,
    port: &mut dyn RobotPort,
    opts: RunOptions,
    cancel: &CancelToken,
    sink: &mut dyn FnMut(&TraceEvent),
) -> Result<ExecutionTrace, SimError> {
    let mut run = Interp {
        port,
        opts,
        cancel,
        sink,
        trace: Vec::new(),
        actions: 0,
    };
    let end = match run.program(program) {
        Ok(()) => TraceEntry::Finished,
        Err(Halt::Entry(e)) => e,
        Err(Halt::Unknown(place)) => return Err(SimError::UnknownPlace(place)),
    };
    run.emit(end);
    Ok(ExecutionTrace(run.trace))
}

enum Halt {
    Entry(TraceEntry),
    Unknown(String),
}

struct Interp<'a> {
    port: &'a mut dyn RobotPort,
    opts: RunOptions,
    cancel: &'a CancelToken,
    sink: &'a mut dyn FnMut(&TraceEvent),
    trace: Vec<TraceEvent>,
    actions: u64,
}

impl Interp<'_> {
    fn emit(&mut self, entry: TraceEntry) {
        let ev = TraceEvent {
            t: self.port.now(),
            entry,
        };
        (self.sink)(&ev);
        self.trace.push(ev);
    }

    fn port_err(e: PortError) -> Halt {
        match e {
            PortError::UnknownPlace(p) => Halt::Unknown(p),
            PortError::Cancelled { place } => Halt::Entry(TraceEntry::Cancelled { place }),
            PortError::Link(reason) => Halt::Entry(TraceEntry::Failed { reason }),
        }
    }

    /// Called before every action: honours cancellation and the run limits.
    fn gate(&mut self, step: &str) -> Result<(), Halt> {
        if self.cancel.is_cancelled() {
            let place = self.port.stop().map_err(Self::port_err)?;
            return Err(Halt::Entry(TraceEntry::Cancelled { place }));
        }
        self.actions += 1;
        if self.actions > self.opts.max_actions || self.port.now() > self.opts.max_virtual_ms {
            return Err(Halt::Entry(TraceEntry::TimedOut { step: step.to_string() }));
        }
        Ok(())
    }

    fn program(&mut self, program: &RobotProgram) -> Result<(), Halt> {
        if let Some(w) = &program.entry {
            self.wake(w, "userRequest")?;
        }
        self.block(&program.body, None)
    }

    fn wake(&mut self, wake_word: &str, step: &str) -> Result<(), Halt> {
        self.gate(step)?;
        self.emit(TraceEntry::Armed {
            wake_word: wake_word.to_string(),
        });
        match self.port.wait_wake_word(wake_word, self.cancel) {
            Ok(true) => {
                self.emit(TraceEntry::Triggered {
                    wake_word: wake_word.to_string(),
                });
                Ok(())
            }
            Ok(false) => Err(Halt::Entry(TraceEntry::TimedOut { step: step.to_string() })),
            Err(e) => Err(Self::port_err(e)),
        }
    }

    fn block(&mut self, block: &Block, parent: Option<(&AstPath, Branch)>) -> Result<(), Halt> {
        for (i, step) in block.iter().enumerate() {
            let path = match parent {
                None => AstPath::top(i),
                Some((p, b)) => p.child(b, i),
            };
            self.step(step, &path)?;
        }
        Ok(())
    }

    fn ask(&mut self, text: &str, at: &str) -> Result<Option<String>, Halt> {
        self.gate(at)?;
        self.emit(TraceEntry::Asked { text: text.to_string() });
        match self.port.ask(text, self.opts.ask_timeout_ms, self.cancel) {
            Ok(Some(reply)) => {
                self.emit(TraceEntry::Heard { text: reply.clone() });
                Ok(Some(reply))
            }
            Ok(None) => {
                self.emit(TraceEntry::ReplyTimedOut);
                Ok(None)
            }
            Err(e) => Err(Self::port_err(e)),
        }
    }

    fn detect(&mut self, at: &str) -> Result<bool, Halt> {
        self.gate(at)?;
        let present = self.port.detect_human().map_err(Self::port_err)?;
        self.emit(TraceEntry::Detected { present });
        Ok(present)
    }

    fn step(&mut self, step: &Step, path: &AstPath) -> Result<(), Halt> {
        let at = path.to_string();
        match step {
            Step::Do(cmd) => match cmd {
                Command::UserRequest(w) => self.wake(w, &at)?,
                Command::Goto(place) => {
                    self.gate(&at)?;
                    self.emit(TraceEntry::MoveStarted { place: place.clone() });
                    self.port.goto(place, self.cancel).map_err(Self::port_err)?;
                    self.emit(TraceEntry::MoveArrived { place: place.clone() });
                }
                Command::Say(text) => {
                    self.gate(&at)?;
                    self.port.say(text).map_err(Self::port_err)?;
                    self.emit(TraceEntry::Said { text: text.clone() });
                }
                Command::Ask(text) => {
                    self.ask(text, &at)?;
                }
                Command::HumanDetection => {
                    self.detect(&at)?;
                }
            },
            Step::IfHuman { then, otherwise } => {
                let present = self.detect(&at)?;
                let (label, body, branch) = if present {
                    ("yes", then, Branch::Then)
                } else {
                    ("no", otherwise, Branch::Else)
                };
                self.emit(TraceEntry::BranchTaken { label: label.into() });
                self.block(body, Some((path, branch)))?;
            }
            Step::AskBranch {
                question,
                arms,
                default,
            } => {
                let reply = self.ask(question, &at)?.map(|r| fold(&r));
                let hit = reply.and_then(|r| {
                    arms.iter()
                        .position(|a| r.contains(&fold(&a.pattern)))
                });
                match hit {
                    Some(k) => {
                        self.emit(TraceEntry::BranchTaken {
                            label: arms[k].pattern.clone(),
                        });
                        self.block(&arms[k].body, Some((path, Branch::Arm(k))))?;
                    }
                    None => {
                        self.emit(TraceEntry::BranchTaken {
                            label: DEFAULT_ARM.into(),
                        });
                        self.block(default, Some((path, Branch::Default)))?;
                    }
                }
            }
            Step::Repeat { count, body } => {
                for n in 1..=u64::from(*count) {
                    self.gate(&at)?;
                    self.emit(TraceEntry::LoopIteration { n });
                    self.block(body, Some((path, Branch::Loop)))?;
                }
            }
            Step::Forever { body } => {
                for n in 1.. {
                    self.gate(&at)?;
                    self.emit(TraceEntry::LoopIteration { n });
                    self.block(body, Some((path, Branch::Loop)))?;
                }
            }
        }
        Ok(())
    }
}
