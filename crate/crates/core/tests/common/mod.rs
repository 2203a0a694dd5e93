//! Random programs and graph edits shared by the property tests and the
//! acceptance suite.
#![allow(dead_code)]

pub mod closure;
pub mod fixtures;
pub mod sessions;

use cocobo_core::dsl::{Arm, Block, Command, RobotProgram, Step};
use cocobo_core::flowchart::{apply_edit, fresh_id, FlowGraph, GraphEdit, NodeKind};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PLACES: [&str; 6] = [
    "Reception Area",
    "Meeting Room",
    "Exhibition Area",
    "Multimedia Studio",
    "Office",
    "Pantry",
];

/// Text fragments chosen to stress quoting and keyword handling.
const TEXTS: [&str; 14] = [
    "hello",
    "Welcome to the office",
    "a \"quoted\" word",
    "back\\slash",
    "arrow --> here",
    "pipes | and [brackets] {braces} (parens)",
    "percent %% sign;",
    "colon: inside",
    "ünïcödé ✓",
    "end",
    "if human",
    "default",
    "trailing colon:",
    "x",
];

const PATTERNS: [&str; 10] = [
    "exhibition",
    "multimedia",
    "jack",
    "Rose",
    "yes please",
    "no",
    "a|b",
    "end",
    "meeting: now",
    "\"quoted\"",
];

pub struct Gen<'r, R: Rng> {
    rng: &'r mut R,
    budget: usize,
}

impl<R: Rng> Gen<'_, R> {
    fn text(&mut self) -> String {
        TEXTS.choose(self.rng).unwrap().to_string()
    }

    fn command(&mut self) -> Command {
        match self.rng.gen_range(0..4) {
            0 => Command::Goto(PLACES.choose(self.rng).unwrap().to_string()),
            1 => Command::Say(self.text()),
            2 => Command::Ask(self.text()),
            _ => Command::HumanDetection,
        }
    }

    fn block(&mut self, depth: usize, min: usize) -> Block {
        let want = self.rng.gen_range(min..=4);
        let mut out = Vec::new();
        while out.len() < want && self.budget > 0 {
            out.push(self.step(depth));
        }
        out
    }

    fn step(&mut self, depth: usize) -> Step {
        self.budget -= 1;
        let compound = depth < 4 && self.budget > 0 && self.rng.gen_bool(0.35);
        if !compound {
            return Step::Do(self.command());
        }
        match self.rng.gen_range(0..3) {
            0 => Step::IfHuman {
                then: self.block(depth + 1, 0),
                otherwise: self.block(depth + 1, 0),
            },
            1 => {
                let n = self.rng.gen_range(1..=3);
                let patterns: Vec<&str> = PATTERNS.choose_multiple(self.rng, n).copied().collect();
                let arms = patterns
                    .into_iter()
                    .map(|p| Arm {
                        pattern: p.to_string(),
                        body: self.block(depth + 1, 0),
                    })
                    .collect();
                Step::AskBranch {
                    question: self.text(),
                    arms,
                    default: self.block(depth + 1, 0),
                }
            }
            _ => Step::Repeat {
                count: self.rng.gen_range(1..=5),
                body: self.block(depth + 1, 1),
            },
        }
    }
}

/// A valid program with nesting depth at most 4 and at most `max_steps`
/// steps in total.
pub fn random_program<R: Rng>(rng: &mut R, max_steps: usize) -> RobotProgram {
    let mut g = Gen {
        rng,
        budget: max_steps,
    };
    let entry = g.rng.gen_bool(0.5).then(|| g.text());
    let forever = g.rng.gen_bool(0.2);
    if forever {
        // The loop itself plus its first body step.
        g.budget -= 2;
    }
    let mut body = g.block(1, 1);
    if body.is_empty() {
        body.push(Step::say("x"));
    }
    // A trailing Forever at the top level wraps the program's tail.
    if forever {
        g.budget += 1;
        let inner = g.block(2, 1);
        body.push(Step::Forever { body: inner });
    }
    RobotProgram { entry, body }
}

pub fn seeded_program(seed: u64) -> RobotProgram {
    random_program(&mut ChaCha8Rng::seed_from_u64(seed), 30)
}

pub fn program_strategy() -> impl Strategy<Value = RobotProgram> {
    any::<u64>().prop_map(seeded_program)
}

pub fn count_steps(block: &[Step]) -> usize {
    block
        .iter()
        .map(|s| {
            1 + match s {
                Step::Do(_) => 0,
                Step::IfHuman { then, otherwise } => count_steps(then) + count_steps(otherwise),
                Step::AskBranch { arms, default, .. } => {
                    arms.iter().map(|a| count_steps(&a.body)).sum::<usize>() + count_steps(default)
                }
                Step::Repeat { body, .. } | Step::Forever { body } => count_steps(body),
            }
        })
        .sum()
}

pub fn depth(block: &[Step]) -> usize {
    block
        .iter()
        .map(|s| {
            1 + match s {
                Step::Do(_) => 0,
                Step::IfHuman { then, otherwise } => depth(then).max(depth(otherwise)),
                Step::AskBranch { arms, default, .. } => arms
                    .iter()
                    .map(|a| depth(&a.body))
                    .max()
                    .unwrap_or(0)
                    .max(depth(default)),
                Step::Repeat { body, .. } | Step::Forever { body } => depth(body),
            }
        })
        .max()
        .unwrap_or(0)
}

/// A random editor action on `graph`; the result need not be structured.
pub fn random_edit<R: Rng>(rng: &mut R, graph: &FlowGraph) -> Option<GraphEdit> {
    let edges = graph.edges();
    let nodes = graph.nodes();
    let actions: Vec<&str> = nodes
        .iter()
        .filter(|n| matches!(n.kind, NodeKind::Action(_)))
        .map(|n| n.id.as_str())
        .collect();
    Some(match rng.gen_range(0..6) {
        0 => {
            let e = edges.choose(rng)?;
            GraphEdit::InsertAction {
                from: e.from.clone(),
                to: e.to.clone(),
                label: e.label.clone(),
                id: fresh_id(graph),
                command: format!("say: {}", TEXTS.choose(rng).unwrap()),
            }
        }
        1 => GraphEdit::RemoveAction {
            id: actions.choose(rng)?.to_string(),
        },
        2 => GraphEdit::Relabel {
            id: actions.choose(rng)?.to_string(),
            command: format!("goto: {}", PLACES.choose(rng).unwrap()),
        },
        3 => GraphEdit::Describe {
            id: nodes.choose(rng)?.id.clone(),
            text: "do it more politely".into(),
        },
        4 => {
            let e = edges.choose(rng)?;
            GraphEdit::RemoveEdge {
                from: e.from.clone(),
                to: e.to.clone(),
                label: e.label.clone(),
            }
        }
        _ => {
            let from = nodes.choose(rng)?.id.clone();
            let to = nodes.choose(rng)?.id.clone();
            let label = rng.gen_bool(0.5).then(|| "extra".to_string());
            if edges
                .iter()
                .any(|e| e.from == from && e.to == to && e.label == label)
            {
                return None;
            }
            GraphEdit::AddEdge { from, to, label }
        }
    })
}

/// Apply up to `n` random edits.
pub fn random_edits<R: Rng>(rng: &mut R, graph: &FlowGraph, n: usize) -> FlowGraph {
    let mut g = graph.clone();
    for _ in 0..n {
        if let Some(edit) = random_edit(rng, &g) {
            if let Ok(next) = apply_edit(&g, &edit) {
                let distinct: std::collections::HashSet<_> = next.edges().iter().collect();
                if distinct.len() == next.edges().len() {
                    g = next;
                }
            }
        }
    }
    g
}
