//! The bridge against the direct interpreter, frozen frame captures, and
//! wire-format properties.

mod common;

use std::time::Duration;

use cocobo_core::sim::bridge::{
    decode_bridge, encode_bridge, frames_from_jsonl, frames_to_jsonl, serve_bridge, Ack, BridgeCommand, BridgeEvent,
    BridgeMessage, BridgeOptions, BridgeRobot, BridgeSession, Decoder, Direction, Payload, ProtocolError,
    RecordingTransport, ReplayTransport, WsTransport,
};
use cocobo_core::sim::{run_on_port, run_program, ExecutionTrace, RunOptions};
use cocobo_core::CancelToken;
use common::fixtures::{self, golden, RunCase};
use proptest::prelude::*;

const TIMEOUT: Duration = Duration::from_secs(5);

fn direct(c: &RunCase) -> ExecutionTrace {
    let opts = RunOptions::default();
    run_program(
        &fixtures::program(&c.program),
        &fixtures::world(),
        &fixtures::events(&c.events),
        opts.ask_timeout_ms,
    )
    .unwrap()
}

fn through_server(c: &RunCase) -> (ExecutionTrace, String) {
    let server = serve_bridge(
        fixtures::world(),
        fixtures::events(&c.events),
        "127.0.0.1:0",
        BridgeOptions::default(),
    )
    .unwrap();
    let ws = WsTransport::connect(&server.url(), TIMEOUT).unwrap();
    let (rec, frames) = RecordingTransport::new(ws);
    let mut robot = BridgeRobot::connect(rec, TIMEOUT).unwrap();
    let trace = run_on_port(
        &fixtures::program(&c.program),
        &mut robot,
        RunOptions::default(),
        &CancelToken::new(),
        &mut |_| {},
    )
    .unwrap();
    drop(robot);
    server.shutdown();
    let captured = frames_to_jsonl(&frames.lock());
    (trace, captured)
}

#[test]
fn bridge_trace_equals_direct_trace_for_every_fixture() {
    for c in fixtures::manifest().runs {
        let (trace, frames) = through_server(&c);
        assert_eq!(trace, direct(&c), "{}", c.name);
        golden(&format!("frames/{}.jsonl", c.name), &frames);
    }
}

#[test]
fn golden_frames_drive_the_controller_byte_for_byte() {
    for c in fixtures::manifest().runs {
        let frames = frames_from_jsonl(&fixtures::read(&format!("frames/{}.jsonl", c.name))).unwrap();
        let mut robot = BridgeRobot::connect(ReplayTransport::new(frames), TIMEOUT).unwrap();
        let trace = run_on_port(
            &fixtures::program(&c.program),
            &mut robot,
            RunOptions::default(),
            &CancelToken::new(),
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(trace, direct(&c), "{}", c.name);
    }
}

#[test]
fn golden_frames_drive_the_robot_byte_for_byte() {
    for c in fixtures::manifest().runs {
        let frames = frames_from_jsonl(&fixtures::read(&format!("frames/{}.jsonl", c.name))).unwrap();
        let mut session = BridgeSession::new(fixtures::world(), &fixtures::events(&c.events), None);
        let mut produced = vec![session.hello()];
        for f in frames.iter().filter(|f| f.dir == Direction::C2s) {
            assert!(session.handle(f.frame.as_bytes(), &mut || false, &mut |s| produced.push(s)));
        }
        let expected: Vec<&str> = frames
            .iter()
            .filter(|f| f.dir == Direction::S2c)
            .map(|f| f.frame.as_str())
            .collect();
        assert_eq!(produced, expected, "{}", c.name);
    }
}

#[test]
fn replay_rejects_a_diverging_controller() {
    let c = &fixtures::manifest().runs[0];
    let frames = frames_from_jsonl(&fixtures::read(&format!("frames/{}.jsonl", c.name))).unwrap();
    let mut robot = BridgeRobot::connect(ReplayTransport::new(frames), TIMEOUT).unwrap();
    let other = cocobo_core::dsl::parse_program("say: something else").unwrap();
    let trace = run_on_port(&other, &mut robot, RunOptions::default(), &CancelToken::new(), &mut |_| {}).unwrap();
    assert!(matches!(
        trace.terminal(),
        Some(cocobo_core::sim::TraceEntry::Failed { .. })
    ));
}

fn text() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-zA-Z ]{0,12}",
        Just("quote \" backslash \\ newline \n tab \t".to_string()),
        "\\PC{0,8}",
    ]
}

fn command() -> impl Strategy<Value = BridgeCommand> {
    prop_oneof![
        text().prop_map(|wake_word| BridgeCommand::ArmWakeWord { wake_word }),
        text().prop_map(|place| BridgeCommand::Goto { place }),
        text().prop_map(|text| BridgeCommand::Say { text }),
        (text(), any::<u64>()).prop_map(|(text, timeout_ms)| BridgeCommand::Ask { text, timeout_ms }),
        Just(BridgeCommand::QueryHumanDetection),
        Just(BridgeCommand::Stop),
    ]
}

fn event() -> impl Strategy<Value = BridgeEvent> {
    prop_oneof![
        (text(), any::<u64>(), text(), prop::collection::vec(text(), 0..4)).prop_map(|(schema, t, place, places)| {
            BridgeEvent::Hello {
                schema,
                t,
                place,
                places,
            }
        }),
        (text(), any::<u64>()).prop_map(|(wake_word, t)| BridgeEvent::WakeWordTriggered { wake_word, t }),
        (text(), any::<u64>()).prop_map(|(wake_word, t)| BridgeEvent::WakeWordUnavailable { wake_word, t }),
        (text(), any::<u64>()).prop_map(|(place, t)| BridgeEvent::Arrived { place, t }),
        (text(), any::<u64>()).prop_map(|(text, t)| BridgeEvent::UtteranceHeard { text, t }),
        any::<u64>().prop_map(|t| BridgeEvent::AskTimedOut { t }),
        (any::<bool>(), any::<u64>()).prop_map(|(present, t)| BridgeEvent::HumanDetection { present, t }),
        (text(), any::<u64>()).prop_map(|(place, t)| BridgeEvent::Stopped { place, t }),
        (any::<u64>(), text(), any::<u64>()).prop_map(|(command_seq, message, t)| BridgeEvent::CommandFailed {
            command_seq,
            message,
            t
        }),
        text().prop_map(|message| BridgeEvent::ProtocolError { message }),
    ]
}

fn message() -> impl Strategy<Value = BridgeMessage> {
    let payload = prop_oneof![
        command().prop_map(Payload::Command),
        event().prop_map(Payload::Event),
        (any::<u64>(), any::<u64>()).prop_map(|(ack_seq, t)| Payload::Ack(Ack { ack_seq, t })),
    ];
    (any::<u64>(), payload).prop_map(|(seq, payload)| BridgeMessage { seq, payload })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn decode_inverts_encode(m in message()) {
        let frame = encode_bridge(&m);
        prop_assert_eq!(decode_bridge(frame.as_bytes()), Ok(m.clone()));
        // Canonical: re-encoding the decoded frame gives the same bytes.
        prop_assert_eq!(encode_bridge(&decode_bridge(frame.as_bytes()).unwrap()), frame);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_bridge(&bytes);
    }

    #[test]
    fn decoder_rejects_non_increasing_seq(a in 1u64..1000, b in 1u64..1000) {
        let msg = |seq| encode_bridge(&BridgeMessage { seq, payload: Payload::Command(BridgeCommand::Stop) });
        let mut d = Decoder::default();
        d.decode(msg(a).as_bytes()).unwrap();
        let r = d.decode(msg(b).as_bytes());
        if b > a {
            prop_assert!(r.is_ok());
        } else {
            prop_assert_eq!(r, Err(ProtocolError::SeqRegression { prev: a, got: b }));
        }
    }
}
