use std::collections::VecDeque;
use std::io::ErrorKind;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use super::protocol::{BridgeCommand, BridgeEvent, Decoder, Encoder, Payload, BRIDGE_SCHEMA};
use crate::cancel::CancelToken;
use crate::sim::robot::{PortError, RobotPort};

/// Moves text frames to and from a robot.
pub trait Transport: Send {
    fn send(&mut self, frame: &str) -> Result<(), PortError>;
    /// Wait up to `wait` for the next frame.
    fn recv(&mut self, wait: Duration) -> Result<Option<String>, PortError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send(&mut self, frame: &str) -> Result<(), PortError> {
        (**self).send(frame)
    }

    fn recv(&mut self, wait: Duration) -> Result<Option<String>, PortError> {
        (**self).recv(wait)
    }
}

fn link(e: impl std::fmt::Display) -> PortError {
    PortError::Link(e.to_string())
}

pub struct WsTransport {
    ws: WebSocket<TcpStream>,
}

impl WsTransport {
    /// Connect to `ws://host:port/...`.
    pub fn connect(url: &str, timeout: Duration) -> Result<Self, PortError> {
        let rest = url
            .strip_prefix("ws://")
            .ok_or_else(|| PortError::Link(format!("not a ws:// address: {url}")))?;
        let host = rest.split('/').next().unwrap_or(rest);
        let addrs: Vec<_> = host.to_socket_addrs().map_err(link)?.collect();
        let mut last = PortError::Link(format!("no address for {host}"));
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(stream) => {
                    stream.set_nodelay(true).map_err(link)?;
                    stream.set_read_timeout(Some(timeout)).map_err(link)?;
                    let (ws, _) = tungstenite::client(url, stream).map_err(link)?;
                    return Ok(WsTransport { ws });
                }
                Err(e) => last = link(e),
            }
        }
        Err(last)
    }
}

impl Transport for WsTransport {
    fn send(&mut self, frame: &str) -> Result<(), PortError> {
        self.ws.send(Message::text(frame)).map_err(link)
    }

    fn recv(&mut self, wait: Duration) -> Result<Option<String>, PortError> {
        let wait = wait.max(Duration::from_millis(1));
        self.ws.get_ref().set_read_timeout(Some(wait)).map_err(link)?;
        match self.ws.read() {
            Ok(Message::Text(t)) => Ok(Some(t.as_str().to_string())),
            Ok(Message::Close(_)) => Err(PortError::Link("robot closed the connection".into())),
            Ok(_) => Ok(None),
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                Ok(None)
            }
            Err(e) => Err(link(e)),
        }
    }
}

impl Drop for WsTransport {
    fn drop(&mut self) {
        let _ = self.ws.close(None);
        let _ = self.ws.flush();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Controller to robot.
    C2s,
    /// Robot to controller.
    S2c,
}

/// One captured frame, stored as a line of a golden frame file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub dir: Direction,
    pub frame: String,
}

pub fn frames_to_jsonl(frames: &[Frame]) -> String {
    frames
        .iter()
        .map(|f| serde_json::to_string(f).expect("frames serialize") + "\n")
        .collect()
}

pub fn frames_from_jsonl(text: &str) -> Result<Vec<Frame>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

/// Passes frames through and keeps a copy of each.
pub struct RecordingTransport<T> {
    inner: T,
    frames: Arc<Mutex<Vec<Frame>>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> (Self, Arc<Mutex<Vec<Frame>>>) {
        let frames = Arc::new(Mutex::new(Vec::new()));
        (
            RecordingTransport {
                inner,
                frames: frames.clone(),
            },
            frames,
        )
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&mut self, frame: &str) -> Result<(), PortError> {
        self.inner.send(frame)?;
        self.frames.lock().push(Frame {
            dir: Direction::C2s,
            frame: frame.to_string(),
        });
        Ok(())
    }

    fn recv(&mut self, wait: Duration) -> Result<Option<String>, PortError> {
        let got = self.inner.recv(wait)?;
        if let Some(f) = &got {
            self.frames.lock().push(Frame {
                dir: Direction::S2c,
                frame: f.clone(),
            });
        }
        Ok(got)
    }
}

/// Plays a captured conversation back. Every frame the controller sends
/// must equal the captured one byte for byte.
pub struct ReplayTransport {
    frames: VecDeque<Frame>,
}

impl ReplayTransport {
    pub fn new(frames: Vec<Frame>) -> Self {
        ReplayTransport { frames: frames.into() }
    }

    pub fn remaining(&self) -> usize {
        self.frames.len()
    }
}

impl Transport for ReplayTransport {
    fn send(&mut self, frame: &str) -> Result<(), PortError> {
        match self.frames.pop_front() {
            Some(Frame { dir: Direction::C2s, frame: want }) if want == frame => Ok(()),
            Some(Frame { dir: Direction::C2s, frame: want }) => {
                Err(PortError::Link(format!("replay mismatch: sent {frame}, captured {want}")))
            }
            other => Err(PortError::Link(format!("replay mismatch: sent {frame}, captured {other:?}"))),
        }
    }

    fn recv(&mut self, _wait: Duration) -> Result<Option<String>, PortError> {
        match self.frames.front() {
            Some(Frame { dir: Direction::S2c, .. }) => Ok(self.frames.pop_front().map(|f| f.frame)),
            Some(f) => Err(PortError::Link(format!("replay expects the controller to send {}", f.frame))),
            None => Err(PortError::Link("replay exhausted".into())),
        }
    }
}

const TICK: Duration = Duration::from_millis(10);

/// A robot reached over the bridge protocol.
pub struct BridgeRobot<T> {
    transport: T,
    encoder: Encoder,
    decoder: Decoder,
    now: u64,
    place: String,
    places: Vec<String>,
}

impl<T: Transport> BridgeRobot<T> {
    /// Wait up to `timeout` for the robot's hello.
    pub fn connect(mut transport: T, timeout: Duration) -> Result<Self, PortError> {
        let mut decoder = Decoder::default();
        let mut waited = Duration::ZERO;
        let frame = loop {
            if let Some(f) = transport.recv(TICK)? {
                break f;
            }
            waited += TICK;
            if waited >= timeout {
                return Err(PortError::Link("robot sent no hello".into()));
            }
        };
        match decoder.decode(frame.as_bytes()).map_err(link)?.payload {
            Payload::Event(BridgeEvent::Hello { schema, t, place, places }) if schema == BRIDGE_SCHEMA => {
                Ok(BridgeRobot {
                    transport,
                    encoder: Encoder::default(),
                    decoder,
                    now: t,
                    place,
                    places,
                })
            }
            other => Err(PortError::Link(format!("expected hello, got {other:?}"))),
        }
    }

    /// Place names the robot announced.
    pub fn places(&self) -> &[String] {
        &self.places
    }

    pub fn position(&self) -> &str {
        &self.place
    }

    fn next(&mut self) -> Result<Option<Payload>, PortError> {
        let Some(frame) = self.transport.recv(TICK)? else {
            return Ok(None);
        };
        let msg = self.decoder.decode(frame.as_bytes()).map_err(link)?;
        match &msg.payload {
            Payload::Ack(a) => self.now = self.now.max(a.t),
            Payload::Event(e) => {
                if let Some(t) = event_time(e) {
                    self.now = self.now.max(t);
                }
                match e {
                    BridgeEvent::ProtocolError { message } => {
                        return Err(PortError::Link(format!("robot reported: {message}")))
                    }
                    BridgeEvent::Arrived { place, .. } | BridgeEvent::Stopped { place, .. } => {
                        self.place = place.clone()
                    }
                    _ => {}
                }
            }
            Payload::Command(_) => return Err(PortError::Link("robot sent a command".into())),
        }
        Ok(Some(msg.payload))
    }

    /// Send a command and wait for its ack, then for one event when
    /// `expect_event`. With `cancel` fired a stop is sent and the call ends
    /// with `Cancelled` once the robot reports where it stopped.
    fn call(
        &mut self,
        cmd: BridgeCommand,
        expect_event: bool,
        cancel: Option<&CancelToken>,
    ) -> Result<Option<BridgeEvent>, PortError> {
        let is_stop = cmd == BridgeCommand::Stop;
        let (seq, frame) = self.encoder.encode(Payload::Command(cmd));
        self.transport.send(&frame)?;
        let mut acked = false;
        let mut stop_sent = false;
        let mut result: Option<BridgeEvent> = None;
        loop {
            if !stop_sent && !is_stop && cancel.is_some_and(CancelToken::is_cancelled) {
                let (_, frame) = self.encoder.encode(Payload::Command(BridgeCommand::Stop));
                self.transport.send(&frame)?;
                stop_sent = true;
            }
            let Some(p) = self.next()? else { continue };
            match p {
                Payload::Ack(a) if a.ack_seq == seq => acked = true,
                Payload::Ack(_) => {}
                Payload::Event(BridgeEvent::Stopped { place, .. }) if stop_sent => {
                    return Err(PortError::Cancelled { place });
                }
                Payload::Event(BridgeEvent::CommandFailed { command_seq, message, .. }) if command_seq == seq => {
                    return Err(PortError::Link(message));
                }
                Payload::Event(e) if acked && expect_event && result.is_none() => result = Some(e),
                Payload::Event(e) => return Err(PortError::Link(format!("unexpected event {e:?}"))),
                Payload::Command(_) => unreachable!("rejected in next()"),
            }
            if acked && !stop_sent && (!expect_event || result.is_some()) {
                return Ok(result);
            }
        }
    }
}

fn event_time(e: &BridgeEvent) -> Option<u64> {
    match e {
        BridgeEvent::Hello { t, .. }
        | BridgeEvent::WakeWordTriggered { t, .. }
        | BridgeEvent::WakeWordUnavailable { t, .. }
        | BridgeEvent::Arrived { t, .. }
        | BridgeEvent::UtteranceHeard { t, .. }
        | BridgeEvent::AskTimedOut { t }
        | BridgeEvent::HumanDetection { t, .. }
        | BridgeEvent::Stopped { t, .. }
        | BridgeEvent::CommandFailed { t, .. } => Some(*t),
        BridgeEvent::ProtocolError { .. } => None,
    }
}

fn unexpected(e: Option<BridgeEvent>) -> PortError {
    PortError::Link(format!("unexpected reply {e:?}"))
}

impl<T: Transport> RobotPort for BridgeRobot<T> {
    fn now(&self) -> u64 {
        self.now
    }

    fn wait_wake_word(&mut self, wake_word: &str, cancel: &CancelToken) -> Result<bool, PortError> {
        let cmd = BridgeCommand::ArmWakeWord {
            wake_word: wake_word.to_string(),
        };
        match self.call(cmd, true, Some(cancel))? {
            Some(BridgeEvent::WakeWordTriggered { .. }) => Ok(true),
            Some(BridgeEvent::WakeWordUnavailable { .. }) => Ok(false),
            other => Err(unexpected(other)),
        }
    }

    fn goto(&mut self, place: &str, cancel: &CancelToken) -> Result<(), PortError> {
        let cmd = BridgeCommand::Goto {
            place: place.to_string(),
        };
        match self.call(cmd, true, Some(cancel)) {
            Ok(Some(BridgeEvent::Arrived { .. })) => Ok(()),
            Ok(other) => Err(unexpected(other)),
            Err(PortError::Link(m)) if m.starts_with("unknown place") => Err(PortError::UnknownPlace(place.to_string())),
            Err(e) => Err(e),
        }
    }

    fn say(&mut self, text: &str) -> Result<(), PortError> {
        self.call(BridgeCommand::Say { text: text.to_string() }, false, None)
            .map(|_| ())
    }

    fn ask(&mut self, text: &str, timeout_ms: u64, cancel: &CancelToken) -> Result<Option<String>, PortError> {
        let cmd = BridgeCommand::Ask {
            text: text.to_string(),
            timeout_ms,
        };
        match self.call(cmd, true, Some(cancel))? {
            Some(BridgeEvent::UtteranceHeard { text, .. }) => Ok(Some(text)),
            Some(BridgeEvent::AskTimedOut { .. }) => Ok(None),
            other => Err(unexpected(other)),
        }
    }

    fn detect_human(&mut self) -> Result<bool, PortError> {
        match self.call(BridgeCommand::QueryHumanDetection, true, None)? {
            Some(BridgeEvent::HumanDetection { present, .. }) => Ok(present),
            other => Err(unexpected(other)),
        }
    }

    fn stop(&mut self) -> Result<String, PortError> {
        match self.call(BridgeCommand::Stop, true, None)? {
            Some(BridgeEvent::Stopped { place, .. }) => Ok(place),
            other => Err(unexpected(other)),
        }
    }
}
