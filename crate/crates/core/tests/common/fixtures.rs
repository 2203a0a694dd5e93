//! The fixture corpus under `fixtures/`.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use cocobo_core::dsl::{parse_program, RobotProgram};
use cocobo_core::sim::{EventScript, WorldModel};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
pub struct Manifest {
    pub world: String,
    pub programs: Vec<String>,
    pub runs: Vec<RunCase>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RunCase {
    pub name: String,
    pub program: String,
    pub events: String,
}

pub fn path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn read(rel: &str) -> String {
    std::fs::read_to_string(path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

pub fn manifest() -> Manifest {
    serde_json::from_str(&read("manifest.json")).unwrap()
}

pub fn world() -> WorldModel {
    WorldModel::load(&path(&manifest().world)).unwrap()
}

pub fn source(name: &str) -> String {
    read(&format!("programs/{name}.coco"))
}

pub fn program(name: &str) -> RobotProgram {
    parse_program(&source(name)).unwrap()
}

pub fn events(name: &str) -> EventScript {
    EventScript::load(&path(&format!("events/{name}.json"))).unwrap()
}

/// Compare against a golden file. With `COCOBO_BLESS=1` a missing golden
/// is written instead.
pub fn golden(rel: &str, actual: &str) {
    let p = path(rel);
    if !p.exists() && std::env::var_os("COCOBO_BLESS").is_some() {
        std::fs::write(&p, actual).unwrap();
    }
    let expected = read(rel);
    assert_eq!(actual, expected, "golden mismatch for {rel}");
}
