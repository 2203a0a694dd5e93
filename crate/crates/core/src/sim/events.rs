use std::path::Path;

use serde::{Deserialize, Serialize};

use super::world::WorldError;

pub const EVENTS_SCHEMA: &str = "events/v1";

/// Something the outside world does to the robot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ExternalEvent {
    WakeWord { text: String },
    SpokenReply { text: String },
    PersonChange { place: String, present: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedEvent {
    /// Virtual milliseconds since the run started.
    pub at: u64,
    #[serde(flatten)]
    pub event: ExternalEvent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventScript {
    pub schema: String,
    pub events: Vec<TimedEvent>,
}

impl Default for EventScript {
    fn default() -> Self {
        EventScript {
            schema: EVENTS_SCHEMA.to_string(),
            events: Vec::new(),
        }
    }
}

impl EventScript {
    pub fn new(events: Vec<TimedEvent>) -> Self {
        EventScript {
            schema: EVENTS_SCHEMA.to_string(),
            events,
        }
    }

    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let s: EventScript = serde_json::from_str(text)?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|source| WorldError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn check(&self) -> Result<(), WorldError> {
        if self.schema != EVENTS_SCHEMA {
            return Err(WorldError::Invalid(format!(
                "unsupported events schema `{}`",
                self.schema
            )));
        }
        if let Some(w) = self.events.windows(2).find(|w| w[1].at < w[0].at) {
            return Err(WorldError::Invalid(format!(
                "event at {} ms comes after one at {} ms",
                w[1].at, w[0].at
            )));
        }
        Ok(())
    }

    pub fn at(mut self, at: u64, event: ExternalEvent) -> Self {
        self.events.push(TimedEvent { at, event });
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape_and_order() {
        let s = EventScript::parse(
            r#"{"schema":"events/v1","events":[
                {"at":0,"type":"wakeWord","text":"guide me"},
                {"at":5,"type":"personChange","place":"A","present":true},
                {"at":5,"type":"spokenReply","text":"yes"}]}"#,
        )
        .unwrap();
        assert_eq!(s.events.len(), 3);
        assert_eq!(
            s.events[1].event,
            ExternalEvent::PersonChange { place: "A".into(), present: true }
        );
        let bad = EventScript::default()
            .at(5, ExternalEvent::WakeWord { text: "a".into() })
            .at(4, ExternalEvent::WakeWord { text: "b".into() });
        assert!(bad.check().is_err());
    }
}
