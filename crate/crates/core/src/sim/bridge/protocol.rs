//! Wire format spoken between a controller and a robot. Every frame is one
//! UTF-8 JSON text frame:
//!
//! ```text
//! {"seq":3,"kind":"command","payload":{"type":"goto","place":"Lab"}}
//! {"seq":5,"kind":"ack","payload":{"ackSeq":3,"t":0}}
//! {"seq":6,"kind":"event","payload":{"type":"arrived","place":"Lab","t":4000}}
//! ```
//!
//! `seq` counts up from 1 in each direction. `t` is the robot's clock in
//! virtual milliseconds.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const BRIDGE_SCHEMA: &str = "bridge/v1";

/// Controller to robot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase", deny_unknown_fields)]
pub enum BridgeCommand {
    ArmWakeWord { wake_word: String },
    Goto { place: String },
    Say { text: String },
    Ask { text: String, timeout_ms: u64 },
    QueryHumanDetection,
    /// Abort the running action; answered with `stopped`.
    Stop,
}

/// Robot to controller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase", deny_unknown_fields)]
pub enum BridgeEvent {
    /// First frame after connecting.
    Hello {
        schema: String,
        t: u64,
        place: String,
        places: Vec<String>,
    },
    WakeWordTriggered { wake_word: String, t: u64 },
    /// No matching wake word will ever be heard.
    WakeWordUnavailable { wake_word: String, t: u64 },
    Arrived { place: String, t: u64 },
    UtteranceHeard { text: String, t: u64 },
    AskTimedOut { t: u64 },
    HumanDetection { present: bool, t: u64 },
    Stopped { place: String, t: u64 },
    CommandFailed { command_seq: u64, message: String, t: u64 },
    /// Sent just before the robot closes the connection.
    ProtocolError { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct Ack {
    pub ack_seq: u64,
    pub t: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Command(BridgeCommand),
    Event(BridgeEvent),
    Ack(Ack),
}

impl Payload {
    pub fn kind(&self) -> &'static str {
        match self {
            Payload::Command(_) => "command",
            Payload::Event(_) => "event",
            Payload::Ack(_) => "ack",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeMessage {
    pub seq: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown message kind `{0}`")]
    UnknownKind(String),
    #[error("seq {got} does not follow {prev}")]
    SeqRegression { prev: u64, got: u64 },
    #[error("unexpected {0}")]
    Unexpected(String),
}

#[derive(Serialize)]
struct Wire<'a, T> {
    seq: u64,
    kind: &'a str,
    payload: &'a T,
}

pub fn encode_bridge(msg: &BridgeMessage) -> String {
    let kind = msg.payload.kind();
    let out = match &msg.payload {
        Payload::Command(c) => serde_json::to_string(&Wire { seq: msg.seq, kind, payload: c }),
        Payload::Event(e) => serde_json::to_string(&Wire { seq: msg.seq, kind, payload: e }),
        Payload::Ack(a) => serde_json::to_string(&Wire { seq: msg.seq, kind, payload: a }),
    };
    out.expect("bridge messages always serialize")
}

pub fn decode_bridge(bytes: &[u8]) -> Result<BridgeMessage, ProtocolError> {
    let bad = |m: String| ProtocolError::Malformed(m);
    let text = std::str::from_utf8(bytes).map_err(|e| bad(e.to_string()))?;
    let v: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let obj = v.as_object().ok_or_else(|| bad("frame is not an object".into()))?;
    if let Some(k) = obj.keys().find(|k| !matches!(k.as_str(), "seq" | "kind" | "payload")) {
        return Err(bad(format!("unexpected field `{k}`")));
    }
    let seq = obj
        .get("seq")
        .and_then(Value::as_u64)
        .ok_or_else(|| bad("missing or invalid `seq`".into()))?;
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .ok_or_else(|| bad("missing `kind`".into()))?;
    let payload = obj.get("payload").cloned().ok_or_else(|| bad("missing `payload`".into()))?;
    let de = |e: serde_json::Error| bad(format!("{kind} payload: {e}"));
    let payload = match kind {
        "command" => Payload::Command(serde_json::from_value(payload).map_err(de)?),
        "event" => Payload::Event(serde_json::from_value(payload).map_err(de)?),
        "ack" => Payload::Ack(serde_json::from_value(payload).map_err(de)?),
        other => return Err(ProtocolError::UnknownKind(other.to_string())),
    };
    Ok(BridgeMessage { seq, payload })
}

/// Decodes one direction of a connection and enforces strictly increasing
/// `seq`.
#[derive(Debug, Clone, Default)]
pub struct Decoder {
    last: Option<u64>,
}

impl Decoder {
    pub fn decode(&mut self, bytes: &[u8]) -> Result<BridgeMessage, ProtocolError> {
        let msg = decode_bridge(bytes)?;
        if let Some(prev) = self.last {
            if msg.seq <= prev {
                return Err(ProtocolError::SeqRegression { prev, got: msg.seq });
            }
        }
        self.last = Some(msg.seq);
        Ok(msg)
    }
}

/// Numbers outgoing messages.
#[derive(Debug, Clone, Default)]
pub struct Encoder {
    seq: u64,
}

impl Encoder {
    pub fn encode(&mut self, payload: Payload) -> (u64, String) {
        self.seq += 1;
        let msg = BridgeMessage { seq: self.seq, payload };
        (self.seq, encode_bridge(&msg))
    }
}
