use std::collections::BTreeMap;
use std::fmt::Write;

use super::ast::{AstPath, Block, Branch, RobotProgram, Step};

const INDENT: &str = "  ";

/// Render a program in canonical CocoScript: lowercase structural keywords,
/// a single space after each colon, two-space indentation, LF line endings
/// and a trailing newline.
pub fn emit_program(program: &RobotProgram) -> String {
    emit_with_spans(program).0
}

/// Line span (0-based, end exclusive) of every step in the canonical text.
pub type StepSpans = BTreeMap<AstPath, (usize, usize)>;

/// Emit the canonical text together with the line span each step occupies.
pub fn emit_with_spans(program: &RobotProgram) -> (String, StepSpans) {
    let mut e = Emitter {
        lines: Vec::new(),
        spans: BTreeMap::new(),
    };
    if let Some(entry) = &program.entry {
        e.lines.push(format!("userRequest: {entry}"));
    }
    for (i, step) in program.body.iter().enumerate() {
        e.step(step, &AstPath::top(i), 0);
    }
    let mut out = String::new();
    for line in &e.lines {
        let _ = writeln!(out, "{line}");
    }
    (out, e.spans)
}

struct Emitter {
    lines: Vec<String>,
    spans: StepSpans,
}

impl Emitter {
    fn push(&mut self, depth: usize, text: impl AsRef<str>) {
        self.lines
            .push(format!("{}{}", INDENT.repeat(depth), text.as_ref()));
    }

    fn block(&mut self, block: &Block, parent: &AstPath, branch: Branch, depth: usize) {
        for (i, step) in block.iter().enumerate() {
            self.step(step, &parent.child(branch, i), depth);
        }
    }

    fn step(&mut self, step: &Step, path: &AstPath, depth: usize) {
        let start = self.lines.len();
        match step {
            Step::Do(cmd) => self.push(depth, cmd.to_string()),
            Step::IfHuman { then, otherwise } => {
                self.push(depth, "if human:");
                self.block(then, path, Branch::Then, depth + 1);
                if !otherwise.is_empty() {
                    self.push(depth, "else:");
                    self.block(otherwise, path, Branch::Else, depth + 1);
                }
                self.push(depth, "end");
            }
            Step::AskBranch {
                question,
                arms,
                default,
            } => {
                self.push(depth, format!("ask: {question}"));
                for (k, arm) in arms.iter().enumerate() {
                    self.push(depth, format!("when {}:", arm.pattern));
                    self.block(&arm.body, path, Branch::Arm(k), depth + 1);
                }
                if !default.is_empty() {
                    self.push(depth, "otherwise:");
                    self.block(default, path, Branch::Default, depth + 1);
                }
                self.push(depth, "end");
            }
            Step::Repeat { count, body } => {
                self.push(depth, format!("repeat {count}:"));
                self.block(body, path, Branch::Loop, depth + 1);
                self.push(depth, "end");
            }
            Step::Forever { body } => {
                self.push(depth, "forever:");
                self.block(body, path, Branch::Loop, depth + 1);
                self.push(depth, "end");
            }
        }
        self.spans.insert(path.clone(), (start, self.lines.len()));
    }
}
