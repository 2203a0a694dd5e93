use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use super::events::{EventScript, ExternalEvent};
use super::world::WorldModel;
use crate::cancel::CancelToken;
use crate::dsl::fold;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PortError {
    #[error("unknown place `{0}`")]
    UnknownPlace(String),
    #[error("stopped at {place}")]
    Cancelled { place: String },
    #[error("robot link failed: {0}")]
    Link(String),
}

/// What the interpreter needs from a robot, simulated or remote. Every call
/// returns once the action is over; `now` reads the robot's clock.
pub trait RobotPort {
    /// Virtual milliseconds since the run started.
    fn now(&self) -> u64;
    /// Block until the wake word is heard. `false` means it never will be.
    fn wait_wake_word(&mut self, wake_word: &str, cancel: &CancelToken) -> Result<bool, PortError>;
    fn goto(&mut self, place: &str, cancel: &CancelToken) -> Result<(), PortError>;
    fn say(&mut self, text: &str) -> Result<(), PortError>;
    /// Ask and wait for a reply; `None` when nothing was heard in time.
    fn ask(&mut self, text: &str, timeout_ms: u64, cancel: &CancelToken) -> Result<Option<String>, PortError>;
    fn detect_human(&mut self) -> Result<bool, PortError>;
    /// Stop whatever is going on and report where the robot is parked.
    fn stop(&mut self) -> Result<String, PortError>;
}

/// A simulated robot with a virtual clock. Waiting and driving advance the
/// clock; with `pace` set they also take real time so runs can be watched
/// and interrupted.
pub struct SimRobot {
    world: WorldModel,
    now: u64,
    at: String,
    persons: BTreeMap<String, bool>,
    person_changes: VecDeque<(u64, String, bool)>,
    wakes: VecDeque<(u64, String)>,
    replies: VecDeque<(u64, String)>,
    /// Real milliseconds per virtual millisecond.
    pace: Option<f64>,
}

const SLICE: Duration = Duration::from_millis(5);

impl SimRobot {
    pub fn new(world: WorldModel, script: &EventScript) -> Self {
        let mut person_changes = VecDeque::new();
        let mut wakes = VecDeque::new();
        let mut replies = VecDeque::new();
        for e in &script.events {
            match &e.event {
                ExternalEvent::WakeWord { text } => wakes.push_back((e.at, text.clone())),
                ExternalEvent::SpokenReply { text } => replies.push_back((e.at, text.clone())),
                ExternalEvent::PersonChange { place, present } => {
                    let name = world.place(place).map_or(place.clone(), |p| p.name.clone());
                    person_changes.push_back((e.at, name, *present));
                }
            }
        }
        let at = world.place(&world.start).map_or(world.start.clone(), |p| p.name.clone());
        let persons = world
            .persons
            .iter()
            .map(|(k, v)| (world.place(k).map_or(k.clone(), |p| p.name.clone()), *v))
            .collect();
        SimRobot {
            world,
            now: 0,
            at,
            persons,
            person_changes,
            wakes,
            replies,
            pace: None,
        }
    }

    pub fn paced(mut self, real_ms_per_virtual_ms: Option<f64>) -> Self {
        self.pace = real_ms_per_virtual_ms.filter(|p| *p > 0.0);
        self
    }

    pub fn position(&self) -> &str {
        &self.at
    }

    pub fn world(&self) -> &WorldModel {
        &self.world
    }

    /// Move the clock forward to `to`. Returns the virtual time actually
    /// reached, which is less than `to` only if `interrupt` fired.
    fn advance(&mut self, to: u64, interrupt: &mut dyn FnMut() -> bool) -> u64 {
        let target = to.max(self.now);
        if let Some(pace) = self.pace {
            let start = Instant::now();
            let from = self.now;
            let real = Duration::from_secs_f64((target - from) as f64 * pace / 1000.0);
            loop {
                let elapsed = start.elapsed();
                if elapsed >= real {
                    break;
                }
                if interrupt() {
                    let done = (elapsed.as_secs_f64() * 1000.0 / pace) as u64;
                    self.now = (from + done).min(target);
                    self.apply_person_changes();
                    return self.now;
                }
                std::thread::sleep(SLICE.min(real - elapsed));
            }
        }
        self.now = target;
        self.apply_person_changes();
        target
    }

    fn apply_person_changes(&mut self) {
        while let Some((at, _, _)) = self.person_changes.front() {
            if *at > self.now {
                break;
            }
            let (_, place, present) = self.person_changes.pop_front().expect("front exists");
            self.persons.insert(place, present);
        }
    }

    pub fn wait_wake_word_with(&mut self, wake_word: &str, interrupt: &mut dyn FnMut() -> bool) -> Result<bool, PortError> {
        while let Some((at, text)) = self.wakes.pop_front() {
            if fold(&text) != fold(wake_word) {
                continue;
            }
            if self.advance(at, interrupt) < at {
                return Err(PortError::Cancelled { place: self.at.clone() });
            }
            return Ok(true);
        }
        Ok(false)
    }

    pub fn goto_with(&mut self, place: &str, interrupt: &mut dyn FnMut() -> bool) -> Result<(), PortError> {
        let to = self
            .world
            .place(place)
            .cloned()
            .ok_or_else(|| PortError::UnknownPlace(place.to_string()))?;
        let from = self.world.place(&self.at).cloned().expect("robot is at a known place");
        let start = self.now;
        let travel = self.world.travel_ms(&from, &to);
        let reached = self.advance(start + travel, interrupt);
        if reached < start + travel {
            let f = (reached - start) as f64 / travel as f64;
            let x = from.x + (to.x - from.x) * f;
            let y = from.y + (to.y - from.y) * f;
            self.at = self.world.nearest(x, y).name.clone();
            return Err(PortError::Cancelled { place: self.at.clone() });
        }
        self.at = to.name;
        Ok(())
    }

    pub fn ask_with(
        &mut self,
        timeout_ms: u64,
        interrupt: &mut dyn FnMut() -> bool,
    ) -> Result<Option<String>, PortError> {
        let deadline = self.now + timeout_ms;
        match self.replies.front() {
            Some((at, _)) if *at <= deadline => {
                let at = *at;
                if self.advance(at, interrupt) < at {
                    return Err(PortError::Cancelled { place: self.at.clone() });
                }
                Ok(self.replies.pop_front().map(|(_, text)| text))
            }
            _ => {
                if self.advance(deadline, interrupt) < deadline {
                    return Err(PortError::Cancelled { place: self.at.clone() });
                }
                Ok(None)
            }
        }
    }
}

impl RobotPort for SimRobot {
    fn now(&self) -> u64 {
        self.now
    }

    fn wait_wake_word(&mut self, wake_word: &str, cancel: &CancelToken) -> Result<bool, PortError> {
        self.wait_wake_word_with(wake_word, &mut || cancel.is_cancelled())
    }

    fn goto(&mut self, place: &str, cancel: &CancelToken) -> Result<(), PortError> {
        self.goto_with(place, &mut || cancel.is_cancelled())
    }

    fn say(&mut self, _text: &str) -> Result<(), PortError> {
        Ok(())
    }

    fn ask(&mut self, _text: &str, timeout_ms: u64, cancel: &CancelToken) -> Result<Option<String>, PortError> {
        self.ask_with(timeout_ms, &mut || cancel.is_cancelled())
    }

    fn detect_human(&mut self) -> Result<bool, PortError> {
        self.apply_person_changes();
        Ok(self.persons.get(&self.at).copied().unwrap_or(false))
    }

    fn stop(&mut self) -> Result<String, PortError> {
        Ok(self.at.clone())
    }
}
