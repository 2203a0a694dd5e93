use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum TraceEntry {
    Armed { wake_word: String },
    Triggered { wake_word: String },
    MoveStarted { place: String },
    MoveArrived { place: String },
    Said { text: String },
    Asked { text: String },
    Heard { text: String },
    /// No reply came within the ask timeout.
    ReplyTimedOut,
    Detected { present: bool },
    BranchTaken { label: String },
    LoopIteration { n: u64 },
    Finished,
    /// The run gave up: the wake word never came or a run limit was hit.
    TimedOut { step: String },
    /// Stopped on request; the robot is parked at `place`.
    Cancelled { place: String },
    /// The robot link broke.
    Failed { reason: String },
}

impl TraceEntry {
    pub fn is_terminal(&self) -> bool {
        matches!(
            self,
            TraceEntry::Finished
                | TraceEntry::TimedOut { .. }
                | TraceEntry::Cancelled { .. }
                | TraceEntry::Failed { .. }
        )
    }
}

impl fmt::Display for TraceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TraceEntry::Armed { wake_word } => write!(f, "Armed({wake_word})"),
            TraceEntry::Triggered { wake_word } => write!(f, "Triggered({wake_word})"),
            TraceEntry::MoveStarted { place } => write!(f, "MoveStarted({place})"),
            TraceEntry::MoveArrived { place } => write!(f, "MoveArrived({place})"),
            TraceEntry::Said { text } => write!(f, "Said({text})"),
            TraceEntry::Asked { text } => write!(f, "Asked({text})"),
            TraceEntry::Heard { text } => write!(f, "Heard({text})"),
            TraceEntry::ReplyTimedOut => f.write_str("ReplyTimedOut"),
            TraceEntry::Detected { present } => write!(f, "Detected({present})"),
            TraceEntry::BranchTaken { label } => write!(f, "BranchTaken({label})"),
            TraceEntry::LoopIteration { n } => write!(f, "LoopIteration({n})"),
            TraceEntry::Finished => f.write_str("Finished"),
            TraceEntry::TimedOut { step } => write!(f, "TimedOut({step})"),
            TraceEntry::Cancelled { place } => write!(f, "Cancelled({place})"),
            TraceEntry::Failed { reason } => write!(f, "Failed({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Virtual milliseconds since the run started.
    pub t: u64,
    #[serde(flatten)]
    pub entry: TraceEntry,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>8} {}", self.t, self.entry)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ExecutionTrace(pub Vec<TraceEvent>);

impl ExecutionTrace {
    pub fn entries(&self) -> impl Iterator<Item = &TraceEntry> {
        self.0.iter().map(|e| &e.entry)
    }

    pub fn arrivals(&self) -> Vec<&str> {
        self.entries()
            .filter_map(|e| match e {
                TraceEntry::MoveArrived { place } => Some(place.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn terminal(&self) -> Option<&TraceEntry> {
        self.0.last().map(|e| &e.entry).filter(|e| e.is_terminal())
    }

    /// One event per line.
    pub fn render(&self) -> String {
        self.0.iter().map(|e| format!("{e}\n")).collect()
    }
}

/// Check the ordering rules every trace obeys: time never goes back, a
/// move's arrival directly follows its start, a reply or reply timeout
/// directly follows the question, a trigger directly follows arming, and
/// exactly one terminal entry closes the trace.
pub fn validate_trace(trace: &[TraceEvent]) -> Result<(), String> {
    let fail = |i: usize, m: &str| Err(format!("entry {i} ({}): {m}", trace[i].entry));
    if let Some(w) = trace.windows(2).position(|w| w[1].t < w[0].t) {
        return fail(w + 1, "time goes backwards");
    }
    for (i, ev) in trace.iter().enumerate() {
        let prev = i.checked_sub(1).map(|p| &trace[p].entry);
        let next = trace.get(i + 1).map(|e| &e.entry);
        match &ev.entry {
            TraceEntry::MoveArrived { place } => {
                if !matches!(prev, Some(TraceEntry::MoveStarted { place: p }) if p == place) {
                    return fail(i, "arrival without a matching start");
                }
            }
            TraceEntry::MoveStarted { place } => match next {
                Some(TraceEntry::MoveArrived { place: p }) if p == place => {}
                Some(TraceEntry::Cancelled { .. } | TraceEntry::Failed { .. }) => {}
                _ => return fail(i, "move neither arrives nor is interrupted"),
            },
            TraceEntry::Heard { .. } | TraceEntry::ReplyTimedOut => {
                if !matches!(prev, Some(TraceEntry::Asked { .. })) {
                    return fail(i, "reply without a question");
                }
            }
            TraceEntry::Triggered { wake_word } => {
                if !matches!(prev, Some(TraceEntry::Armed { wake_word: w }) if w == wake_word) {
                    return fail(i, "trigger without arming");
                }
            }
            e if e.is_terminal() && i + 1 != trace.len() => {
                return fail(i, "terminal entry is not last");
            }
            _ => {}
        }
    }
    match trace.last() {
        Some(e) if e.entry.is_terminal() => Ok(()),
        _ => Err("trace has no terminal entry".into()),
    }
}
