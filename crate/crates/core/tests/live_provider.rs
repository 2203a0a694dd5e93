use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use cocobo_core::llm::*;
use cocobo_core::CancelToken;

/// Read one HTTP request; returns (head, body).
fn read_request(stream: &mut TcpStream) -> (String, String) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut head = String::new();
    let mut len = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap();
        }
        if line == "\r\n" || line.is_empty() {
            break;
        }
        head.push_str(&line);
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).unwrap();
    (head, String::from_utf8(body).unwrap())
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
}

/// Serve one connection with `handler`, returning the listener's base URL.
fn serve_once(handler: impl FnOnce(TcpStream) + Send + 'static) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        if let Ok((stream, _)) = listener.accept() {
            handler(stream);
        }
    });
    format!("http://{addr}/v1")
}

fn provider(base_url: String, timeout: Duration) -> LiveProvider {
    LiveProvider {
        base_url,
        model: "test-model".into(),
        api_key_env: "COCOBO_TEST_KEY_UNSET".into(),
        timeout,
    }
}

fn request() -> ChatRequest {
    let spec = ChainSpec::builtin(FunctionKind::ConversationalModify);
    let slots = SLOTS.iter().map(|s| (s.to_string(), format!("<{s}>"))).collect();
    ChatRequest {
        step: "modify".into(),
        messages: vec![
            ChatMessage::new(Role::System, assemble_prompt(&spec.steps[0].preamble, &slots).unwrap()),
            ChatMessage::new(Role::User, "say hello twice"),
        ],
    }
}

#[test]
fn silent_server_times_out() {
    let (hold_tx, hold_rx) = mpsc::channel::<()>();
    let url = serve_once(move |stream| {
        let _keep = stream;
        let _ = hold_rx.recv_timeout(Duration::from_secs(10));
    });
    let p = provider(url, Duration::from_millis(1));
    let t = Instant::now();
    let err = p.complete(&request(), &CancelToken::new()).unwrap_err();
    assert!(matches!(err, ProviderError::Timeout(_)), "{err:?}");
    assert!(t.elapsed() < Duration::from_secs(2));
    drop(hold_tx);
}

#[test]
fn unauthorized_is_a_status_error() {
    let url = serve_once(|mut s| {
        read_request(&mut s);
        respond(&mut s, "401 Unauthorized", r#"{"error":"bad key"}"#);
    });
    let err = provider(url, Duration::from_secs(5))
        .complete(&request(), &CancelToken::new())
        .unwrap_err();
    assert_eq!(
        err,
        ProviderError::Status { code: 401, message: r#"{"error":"bad key"}"#.into() }
    );
    let chain_err: ChainError = err.into();
    assert_eq!(chain_err.code(), "ProviderError");
}

#[test]
fn request_carries_six_segments_in_order() {
    let (tx, rx) = mpsc::channel();
    let url = serve_once(move |mut s| {
        let (head, body) = read_request(&mut s);
        respond(
            &mut s,
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"<answer>hi</answer>"}}]}"#,
        );
        tx.send((head, body)).unwrap();
    });
    std::env::set_var("COCOBO_TEST_KEY_SET", "sekret");
    let mut p = provider(url, Duration::from_secs(5));
    p.api_key_env = "COCOBO_TEST_KEY_SET".into();
    let out = p.complete(&request(), &CancelToken::new()).unwrap();
    assert_eq!(out, "<answer>hi</answer>");
    let (head, body) = rx.recv().unwrap();
    assert!(head.starts_with("POST /v1/chat/completions "));
    assert!(head.to_ascii_lowercase().contains("authorization: bearer sekret"));
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["model"], "test-model");
    assert_eq!(v["messages"][0]["role"], "system");
    assert_eq!(v["messages"][1]["content"], "say hello twice");
    let system = v["messages"][0]["content"].as_str().unwrap();
    let positions: Vec<usize> = SEGMENTS
        .iter()
        .map(|s| system.find(&format!("[{s}]\n")).expect(s))
        .collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{positions:?}");
}

#[test]
fn cancel_interrupts_a_hanging_call() {
    let (hold_tx, hold_rx) = mpsc::channel::<()>();
    let url = serve_once(move |stream| {
        let _keep = stream;
        let _ = hold_rx.recv_timeout(Duration::from_secs(10));
    });
    let p = provider(url, Duration::from_secs(30));
    let cancel = CancelToken::new();
    let c2 = cancel.clone();
    std::thread::spawn(move || {
        std::thread::sleep(Duration::from_millis(50));
        c2.cancel();
    });
    let t = Instant::now();
    assert_eq!(p.complete(&request(), &cancel), Err(ProviderError::Cancelled));
    assert!(t.elapsed() < Duration::from_secs(5));
    drop(hold_tx);
}
