//! A model that answers every chain step with random but well-formed
//! content, and a driver that throws random user actions at a session.
#![allow(dead_code)]

use std::collections::BTreeMap;

use cocobo_core::dsl::emit_program;
use cocobo_core::flowchart::{ast_to_graph, emit_mermaid, graph_to_render_json};
use cocobo_core::llm::{ChatRequest, Provider, ProviderError, UserTurn};
use cocobo_core::session::{ServiceConfig, ServiceError, SessionService, SessionStore};
use cocobo_core::CancelToken;
use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{fixtures, random_edits, random_program};

/// Answers every chain step with well-formed, randomly chosen content, or
/// with junk for a whole action when told to.
pub struct RandomModel {
    rng: Mutex<ChaCha8Rng>,
    pub broken: Mutex<bool>,
}

impl RandomModel {
    pub fn new(seed: u64) -> Self {
        RandomModel {
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            broken: Mutex::new(false),
        }
    }

    fn program_reply(rng: &mut ChaCha8Rng) -> String {
        let p = random_program(rng, 12);
        format!(
            "<code>\n{}</code>\n<flowchart>\n{}</flowchart>\n<explanation>Updated.</explanation>",
            emit_program(&p),
            emit_mermaid(&ast_to_graph(&p))
        )
    }
}

impl Provider for RandomModel {
    fn complete(&self, request: &ChatRequest, _cancel: &CancelToken) -> Result<String, ProviderError> {
        if *self.broken.lock() {
            return Ok("<code>\nfly: away\n</code>".into());
        }
        let mut rng = self.rng.lock();
        Ok(match request.step.as_str() {
            "requirements" => {
                let n = rng.gen_range(1..4);
                let items: String = (1..=n).map(|i| format!("{i}. Item {i}.\n")).collect();
                format!("<requirements>\n{items}</requirements>")
            }
            "generate" => Self::program_reply(&mut rng),
            "modify" if rng.gen_bool(0.3) => "<answer>It runs from top to bottom.</answer>".into(),
            "modify" => Self::program_reply(&mut rng),
            "node_edit" => "<code>say: edited</code>".into(),
            "explain" => "<explanation>Edited.</explanation>".into(),
            _ => "<answer>The selected nodes run in order.</answer>".into(),
        })
    }
}

pub fn office_config() -> ServiceConfig {
    ServiceConfig {
        world: Some(fixtures::world()),
        ..ServiceConfig::default()
    }
}

#[derive(Debug, Default)]
pub struct Tally(pub BTreeMap<&'static str, usize>);

/// One random user action. Failures must leave the state as it was.
pub fn act(svc: &SessionService, store: &dyn SessionStore, model: &RandomModel, id: &str, rng: &mut ChaCha8Rng, tally: &mut Tally) {
    let before = svc.get(id).unwrap();
    let logged = store.records(id).unwrap().len();
    *model.broken.lock() = rng.gen_bool(0.1);
    let (name, r): (&'static str, Result<(), ServiceError>) = match rng.gen_range(0..7) {
        0 | 1 => ("message", svc.post_message(id, UserTurn::text("make it better")).map(drop)),
        2 => ("confirm", svc.post_message(id, UserTurn::confirm("yes")).map(drop)),
        3 => ("reject", svc.post_message(id, UserTurn::reject("no")).map(drop)),
        4 => {
            let r = match &before.graph {
                Some(g) => {
                    let n = rng.gen_range(0..3);
                    let edited = random_edits(rng, g, n);
                    svc.sync_change(id, &graph_to_render_json(&edited)).map(drop)
                }
                None => Err(ServiceError::NoProgramYet),
            };
            ("sync", r)
        }
        5 => {
            let ids: Vec<String> = before
                .graph
                .as_ref()
                .map(|g| g.nodes().iter().map(|n| n.id.clone()).collect())
                .unwrap_or_default();
            let k = rng.gen_range(0..3);
            let mut pick: Vec<String> = ids.choose_multiple(rng, k).cloned().collect();
            if rng.gen_bool(0.1) {
                pick.push("nope".into());
            }
            ("debugStart", svc.magic_debug_start(id, pick).map(drop))
        }
        _ => ("debugEnd", svc.magic_debug_end(id).map(drop)),
    };
    *model.broken.lock() = false;
    let key = if r.is_ok() { name } else { "failed" };
    *tally.0.entry(key).or_default() += 1;
    if r.is_err() {
        assert_eq!(svc.get(id).unwrap(), before, "{name} failed but changed the state");
        assert_eq!(store.records(id).unwrap().len(), logged);
    }
}
