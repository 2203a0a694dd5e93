//! WebSocket bridge between the controller and a robot.

mod client;
mod protocol;
mod server;

pub use client::{
    frames_from_jsonl, frames_to_jsonl, BridgeRobot, Direction, Frame, RecordingTransport, ReplayTransport, Transport,
    WsTransport,
};
pub use protocol::{
    decode_bridge, encode_bridge, Ack, BridgeCommand, BridgeEvent, BridgeMessage, Decoder, Encoder, Payload,
    ProtocolError, BRIDGE_SCHEMA,
};
pub use server::{serve_bridge, BridgeError, BridgeOptions, BridgeServer, BridgeSession};
