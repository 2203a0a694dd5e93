//! The `cocobo` binary on the fixture corpus.

use std::path::{Path, PathBuf};
use std::process::Command;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(rel)
}

fn cocobo(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_cocobo")).args(args).output().unwrap();
    (
        out.status.success(),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

fn p(rel: &str) -> String {
    fixture(rel).display().to_string()
}

#[test]
fn roundtrip_passes_on_every_fixture() {
    for name in ["scenario1", "scenario2", "task1", "task2", "task3"] {
        let (ok, out, err) = cocobo(&["roundtrip", &p(&format!("programs/{name}.coco"))]);
        assert!(ok, "{name}: {out}{err}");
        assert_eq!(out.lines().count(), 4);
    }
}

#[test]
fn roundtrip_rejects_a_broken_program() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.coco");
    std::fs::write(&f, "if human:\n  say: hi\n").unwrap();
    let (ok, _, err) = cocobo(&["roundtrip", f.to_str().unwrap()]);
    assert!(!ok);
    assert!(err.contains("UnbalancedBlock"), "{err}");
}

#[test]
fn run_task1_visits_four_places() {
    let (ok, out, err) = cocobo(&[
        "run",
        "--program",
        &p("programs/task1.coco"),
        "--world",
        &p("worlds/office.json"),
        "--events",
        &p("events/task1.json"),
    ]);
    assert!(ok, "{err}");
    assert_eq!(out.lines().filter(|l| l.contains("MoveArrived")).count(), 4, "{out}");
    assert_eq!(out, std::fs::read_to_string(fixture("golden/task1.trace")).unwrap());
}

#[test]
fn run_rejects_unknown_places() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("p.coco");
    std::fs::write(&f, "goto: Moon\n").unwrap();
    let (ok, _, err) = cocobo(&["run", "--program", f.to_str().unwrap(), "--world", &p("worlds/office.json")]);
    assert!(!ok);
    assert!(err.contains("Moon"), "{err}");
}

#[test]
fn author_reproduces_the_golden_program() {
    for name in ["scenario1", "task3"] {
        let (ok, out, err) = cocobo(&[
            "author",
            "--script",
            &p(&format!("scripts/{name}.script.json")),
            "--transcript",
            &p(&format!("transcripts/{name}.transcript.json")),
            "--world",
            &p("worlds/office.json"),
        ]);
        assert!(ok, "{err}");
        assert_eq!(out, std::fs::read_to_string(fixture(&format!("golden/{name}.final.coco"))).unwrap());
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Child(std::process::Child);

impl Drop for Child {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn serve_runs_the_api_and_a_bridge_robot_from_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (api, bridge) = (free_port(), free_port());
    let config = format!(
        "listen = \"127.0.0.1:{api}\"\nworld = \"{}\"\nevents = \"{}\"\n\n[provider]\nkind = \"scripted\"\nscript = \"{}\"\n\n[bridge]\nlisten = \"127.0.0.1:{bridge}\"\ntimeScale = 1.0\n",
        p("worlds/office.json"),
        p("events/scenario1.json"),
        p("scripts/scenario1.script.json"),
    );
    let path = dir.path().join("cocobo.toml");
    std::fs::write(&path, config).unwrap();
    let _child = Child(
        Command::new(env!("CARGO_BIN_EXE_cocobo"))
            .args(["serve", "--config", path.to_str().unwrap()])
            .stderr(std::process::Stdio::null())
            .spawn()
            .unwrap(),
    );
    let base = format!("http://127.0.0.1:{api}");
    let mut session = None;
    for _ in 0..100 {
        if let Ok(mut r) = ureq::post(format!("{base}/sessions")).send_empty() {
            session = Some(r.body_mut().read_json::<serde_json::Value>().unwrap());
            break;
        }
        std::thread::sleep(std::time::Duration::from_millis(50));
    }
    let id = session.expect("server came up")["id"].as_str().unwrap().to_string();
    let post = |path: &str, body: serde_json::Value| {
        ureq::post(format!("{base}{path}"))
            .send_json(&body)
            .unwrap()
            .body_mut()
            .read_json::<serde_json::Value>()
            .unwrap()
    };
    post(&format!("/sessions/{id}/messages"), serde_json::json!({"text": "guide"}));
    post(&format!("/sessions/{id}/messages"), serde_json::json!({"text": "yes", "confirm": true}));
    // The bridge robot runs in real time: the wake word comes after 1 s,
    // then the walk to the Meeting Room takes over 8 s.
    let r = post(
        &format!("/sessions/{id}/deploy"),
        serde_json::json!({"target": "bridge", "address": format!("ws://127.0.0.1:{bridge}/")}),
    );
    let run = r["run"].as_str().unwrap();
    std::thread::sleep(std::time::Duration::from_millis(1500));
    let r = ureq::delete(format!("{base}/runs/{run}"))
        .call()
        .unwrap()
        .body_mut()
        .read_json::<serde_json::Value>()
        .unwrap();
    assert_eq!(r["finished"], true, "{r}");
    let trace = r["trace"].as_array().unwrap();
    let kinds: Vec<&str> = trace.iter().map(|e| e["type"].as_str().unwrap()).collect();
    assert_eq!(kinds, ["armed", "triggered", "said", "moveStarted", "cancelled"], "{r}");
    assert_eq!(trace.last().unwrap()["type"], "cancelled", "{r}");
    assert_eq!(trace.last().unwrap()["place"], "Reception Area");
    // Files live next to the config.
    assert!(dir.path().join("sessions").join(format!("{id}.jsonl")).exists());
}
