use std::cell::{Cell, RefCell};
use std::collections::VecDeque;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use super::protocol::{
    Ack, BridgeCommand, BridgeEvent, Decoder, Encoder, Payload, ProtocolError, BRIDGE_SCHEMA,
};
use crate::sim::events::EventScript;
use crate::sim::robot::{PortError, RobotPort, SimRobot};
use crate::sim::world::WorldModel;

/// The robot side of one bridge connection, independent of the socket.
pub struct BridgeSession {
    robot: SimRobot,
    decoder: Decoder,
    encoder: Encoder,
}

impl BridgeSession {
    pub fn new(world: WorldModel, script: &EventScript, time_scale: Option<f64>) -> Self {
        BridgeSession {
            robot: SimRobot::new(world, script).paced(time_scale),
            decoder: Decoder::default(),
            encoder: Encoder::default(),
        }
    }

    pub fn robot(&self) -> &SimRobot {
        &self.robot
    }

    fn event(&mut self, e: BridgeEvent) -> String {
        self.encoder.encode(Payload::Event(e)).1
    }

    pub fn hello(&mut self) -> String {
        let places = self.robot.world().places.iter().map(|p| p.name.clone()).collect();
        let hello = BridgeEvent::Hello {
            schema: BRIDGE_SCHEMA.to_string(),
            t: self.robot.now(),
            place: self.robot.position().to_string(),
            places,
        };
        self.event(hello)
    }

    /// Handle one incoming frame. Replies go to `out` as they are produced;
    /// `interrupt` is polled while an action takes real time. Returns false
    /// when the connection must be closed.
    pub fn handle(
        &mut self,
        frame: &[u8],
        interrupt: &mut dyn FnMut() -> bool,
        out: &mut dyn FnMut(String),
    ) -> bool {
        let msg = match self.decoder.decode(frame) {
            Ok(m) => m,
            Err(e) => {
                out(self.event(BridgeEvent::ProtocolError { message: e.to_string() }));
                return false;
            }
        };
        let cmd = match msg.payload {
            Payload::Command(c) => c,
            other => {
                let e = ProtocolError::Unexpected(format!("{} from controller", other.kind()));
                out(self.event(BridgeEvent::ProtocolError { message: e.to_string() }));
                return false;
            }
        };
        let ack = Ack {
            ack_seq: msg.seq,
            t: self.robot.now(),
        };
        out(self.encoder.encode(Payload::Ack(ack)).1);
        let r = &mut self.robot;
        let reply = match cmd {
            BridgeCommand::ArmWakeWord { wake_word } => match r.wait_wake_word_with(&wake_word, interrupt) {
                Ok(true) => Ok(Some(BridgeEvent::WakeWordTriggered { wake_word, t: r.now() })),
                Ok(false) => Ok(Some(BridgeEvent::WakeWordUnavailable { wake_word, t: r.now() })),
                Err(e) => Err(e),
            },
            BridgeCommand::Goto { place } => r.goto_with(&place, interrupt).map(|()| {
                Some(BridgeEvent::Arrived {
                    place: r.position().to_string(),
                    t: r.now(),
                })
            }),
            BridgeCommand::Say { text } => r.say(&text).map(|()| None),
            BridgeCommand::Ask { text: _, timeout_ms } => r.ask_with(timeout_ms, interrupt).map(|heard| {
                Some(match heard {
                    Some(text) => BridgeEvent::UtteranceHeard { text, t: r.now() },
                    None => BridgeEvent::AskTimedOut { t: r.now() },
                })
            }),
            BridgeCommand::QueryHumanDetection => r
                .detect_human()
                .map(|present| Some(BridgeEvent::HumanDetection { present, t: r.now() })),
            BridgeCommand::Stop => r.stop().map(|place| Some(BridgeEvent::Stopped { place, t: r.now() })),
        };
        match reply {
            Ok(Some(e)) => out(self.event(e)),
            Ok(None) => {}
            // The stop that interrupted the action is answered on its own.
            Err(PortError::Cancelled { .. }) => {}
            Err(e) => {
                let failed = BridgeEvent::CommandFailed {
                    command_seq: msg.seq,
                    message: e.to_string(),
                    t: self.robot.now(),
                };
                out(self.event(failed));
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BridgeOptions {
    /// Real milliseconds per virtual millisecond; `None` runs actions
    /// instantly.
    pub time_scale: Option<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

/// A running bridge endpoint. Connections are served one at a time, each
/// against a fresh robot at the world's start place.
pub struct BridgeServer {
    local_addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl BridgeServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}/", self.local_addr)
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BridgeServer {
    fn drop(&mut self) {
        self.stop();
    }
}

const POLL: Duration = Duration::from_millis(10);

pub fn serve_bridge(
    world: WorldModel,
    script: EventScript,
    addr: impl ToSocketAddrs + std::fmt::Display,
    opts: BridgeOptions,
) -> Result<BridgeServer, BridgeError> {
    let bind_err = |source| BridgeError::Bind {
        addr: addr.to_string(),
        source,
    };
    let listener = TcpListener::bind(&addr).map_err(bind_err)?;
    listener.set_nonblocking(true).map_err(bind_err)?;
    let local_addr = listener.local_addr().map_err(bind_err)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let thread = std::thread::spawn(move || {
        while !flag.load(Ordering::SeqCst) {
            match listener.accept() {
                Ok((stream, peer)) => {
                    log::debug!("bridge controller connected from {peer}");
                    let session = BridgeSession::new(world.clone(), &script, opts.time_scale);
                    if let Err(e) = serve_connection(stream, session, &flag) {
                        log::debug!("bridge connection ended: {e}");
                    }
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
                Err(e) => {
                    log::warn!("bridge accept failed: {e}");
                    std::thread::sleep(POLL);
                }
            }
        }
    });
    Ok(BridgeServer {
        local_addr,
        shutdown,
        thread: Some(thread),
    })
}

enum Read {
    Frame(Vec<u8>),
    Idle,
    Gone,
}

fn read_frame(ws: &mut WebSocket<TcpStream>, wait: Duration) -> Read {
    if ws.get_ref().set_read_timeout(Some(wait)).is_err() {
        return Read::Gone;
    }
    match ws.read() {
        Ok(Message::Text(t)) => Read::Frame(t.as_bytes().to_vec()),
        Ok(Message::Binary(b)) => Read::Frame(b.to_vec()),
        Ok(Message::Close(_)) => Read::Gone,
        Ok(_) => Read::Idle,
        Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
            Read::Idle
        }
        Err(_) => Read::Gone,
    }
}

fn is_stop(frame: &[u8]) -> bool {
    matches!(
        super::protocol::decode_bridge(frame),
        Ok(m) if m.payload == Payload::Command(BridgeCommand::Stop)
    )
}

fn serve_connection(stream: TcpStream, mut session: BridgeSession, shutdown: &AtomicBool) -> Result<(), String> {
    stream.set_nonblocking(false).map_err(|e| e.to_string())?;
    stream.set_nodelay(true).map_err(|e| e.to_string())?;
    let ws = tungstenite::accept(stream).map_err(|e| e.to_string())?;
    let ws = RefCell::new(ws);
    let pending: RefCell<VecDeque<Vec<u8>>> = RefCell::new(VecDeque::new());
    let gone = Cell::new(false);
    let send = |s: String| {
        if ws.borrow_mut().send(Message::text(s)).is_err() {
            gone.set(true);
        }
    };
    send(session.hello());
    let mut out = send;
    let mut interrupt = || {
        if gone.get() || shutdown.load(Ordering::SeqCst) {
            return true;
        }
        match read_frame(&mut ws.borrow_mut(), Duration::from_millis(1)) {
            Read::Frame(f) => {
                let stop = is_stop(&f);
                pending.borrow_mut().push_back(f);
                stop
            }
            Read::Idle => false,
            Read::Gone => {
                gone.set(true);
                true
            }
        }
    };
    loop {
        if gone.get() || shutdown.load(Ordering::SeqCst) {
            break;
        }
        let next = pending.borrow_mut().pop_front();
        let frame = match next {
            Some(f) => f,
            None => match read_frame(&mut ws.borrow_mut(), POLL) {
                Read::Frame(f) => f,
                Read::Idle => continue,
                Read::Gone => break,
            },
        };
        if !session.handle(&frame, &mut interrupt, &mut out) {
            let _ = ws.borrow_mut().close(None);
            let _ = ws.borrow_mut().flush();
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::bridge::protocol::{decode_bridge, encode_bridge, BridgeMessage};

    fn world() -> WorldModel {
        WorldModel::parse(
            r#"{"schema":"world/v1","start":"A","speed":1.0,
                "places":[{"name":"A","x":0,"y":0},{"name":"B","x":3,"y":4}]}"#,
        )
        .unwrap()
    }

    fn cmd(seq: u64, c: BridgeCommand) -> Vec<u8> {
        encode_bridge(&BridgeMessage {
            seq,
            payload: Payload::Command(c),
        })
        .into_bytes()
    }

    fn drive(s: &mut BridgeSession, frame: &[u8]) -> (bool, Vec<Payload>) {
        let mut got = Vec::new();
        let ok = s.handle(frame, &mut || false, &mut |f| got.push(decode_bridge(f.as_bytes()).unwrap().payload));
        (ok, got)
    }

    #[test]
    fn say_is_only_acked_and_goto_arrives() {
        let mut s = BridgeSession::new(world(), &EventScript::default(), None);
        let (_, got) = drive(&mut s, &cmd(1, BridgeCommand::Say { text: "hi".into() }));
        assert_eq!(got, [Payload::Ack(Ack { ack_seq: 1, t: 0 })]);
        let (_, got) = drive(&mut s, &cmd(2, BridgeCommand::Goto { place: "b".into() }));
        assert_eq!(
            got,
            [
                Payload::Ack(Ack { ack_seq: 2, t: 0 }),
                Payload::Event(BridgeEvent::Arrived { place: "B".into(), t: 5000 })
            ]
        );
    }

    #[test]
    fn protocol_errors_close() {
        let mut s = BridgeSession::new(world(), &EventScript::default(), None);
        assert!(drive(&mut s, &cmd(4, BridgeCommand::Stop)).0);
        let (ok, got) = drive(&mut s, &cmd(3, BridgeCommand::Stop));
        assert!(!ok);
        assert!(matches!(got[..], [Payload::Event(BridgeEvent::ProtocolError { .. })]));
    }

    #[test]
    fn interrupted_goto_settles_at_a_place() {
        let mut s = BridgeSession::new(world(), &EventScript::default(), Some(1.0));
        let mut calls = 0;
        let mut got = Vec::new();
        s.handle(
            &cmd(1, BridgeCommand::Goto { place: "B".into() }),
            &mut || {
                calls += 1;
                calls > 3
            },
            &mut |f| got.push(f),
        );
        assert_eq!(got.len(), 1, "only the ack");
        assert_eq!(s.robot().position(), "A");
        assert!(s.robot().now() < 5000);
    }
}
