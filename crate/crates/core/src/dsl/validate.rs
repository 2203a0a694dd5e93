use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::ast::{fold, AstPath, Block, Branch, Command, RobotProgram, Step, DEFAULT_ARM};
use crate::diagnostic::{Code, Diagnostic};

/// The place names a deployed world knows about.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldCatalog {
    pub places: Vec<String>,
}

impl WorldCatalog {
    pub fn new<I, S>(places: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        WorldCatalog {
            places: places.into_iter().map(Into::into).collect(),
        }
    }

    /// Match a place name ignoring case and runs of whitespace.
    pub fn resolve(&self, name: &str) -> Option<&str> {
        let key = place_key(name);
        self.places
            .iter()
            .find(|p| place_key(p) == key)
            .map(String::as_str)
    }
}

pub(crate) fn place_key(name: &str) -> String {
    name.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Check the type-level invariants of a program. Parsed programs always
/// pass; ASTs built by hand or recovered from a flowchart may not.
pub fn check_structure(program: &RobotProgram) -> Vec<Diagnostic> {
    let mut c = Checker { diags: Vec::new() };
    if let Some(entry) = &program.entry {
        c.text("wake word", entry, None);
    }
    if program.body.is_empty() {
        c.diags
            .push(Diagnostic::error(Code::EmptyProgram, "program has no steps"));
    }
    let last = program.body.len().saturating_sub(1);
    let mut after_forever = false;
    for (i, step) in program.body.iter().enumerate() {
        let path = AstPath::top(i);
        if after_forever {
            c.diags.push(
                Diagnostic::error(Code::UnreachableStep, "step follows a `forever` loop")
                    .at_path(path.to_string()),
            );
        }
        if matches!(step, Step::Forever { .. }) {
            after_forever = true;
            if i != last {
                c.diags.push(
                    Diagnostic::error(
                        Code::ForeverNotLast,
                        "`forever` must be the last step of the program",
                    )
                    .at_path(path.to_string()),
                );
            }
            if let Step::Forever { body } = step {
                c.loop_body(body, &path);
            }
        } else {
            c.step(step, &path);
        }
    }
    c.diags
}

struct Checker {
    diags: Vec<Diagnostic>,
}

impl Checker {
    fn text(&mut self, what: &str, text: &str, path: Option<&AstPath>) {
        let problem = if text.is_empty() {
            Some("must not be empty")
        } else if text.trim() != text {
            Some("must not have leading or trailing whitespace")
        } else if text.chars().any(char::is_control) {
            Some("contains control characters")
        } else {
            None
        };
        if let Some(problem) = problem {
            let mut d = Diagnostic::error(Code::MalformedArgument, format!("{what} {problem}"));
            if let Some(p) = path {
                d = d.at_path(p.to_string());
            }
            self.diags.push(d);
        }
    }

    fn block(&mut self, block: &Block, parent: &AstPath, branch: Branch) {
        for (i, step) in block.iter().enumerate() {
            self.step(step, &parent.child(branch, i));
        }
    }

    fn loop_body(&mut self, body: &Block, path: &AstPath) {
        if body.is_empty() {
            self.diags.push(
                Diagnostic::error(Code::EmptyBlock, "loop body must not be empty")
                    .at_path(path.to_string()),
            );
        }
        self.block(body, path, Branch::Loop);
    }

    fn step(&mut self, step: &Step, path: &AstPath) {
        match step {
            Step::Do(Command::UserRequest(_)) => self.diags.push(
                Diagnostic::error(
                    Code::MisplacedEntryTrigger,
                    "`userRequest` may only appear as the program entry",
                )
                .at_path(path.to_string()),
            ),
            Step::Do(cmd) => {
                if let Some(p) = cmd.payload() {
                    self.text(&format!("`{}` argument", cmd.keyword()), p, Some(path));
                }
            }
            Step::IfHuman { then, otherwise } => {
                self.block(then, path, Branch::Then);
                self.block(otherwise, path, Branch::Else);
            }
            Step::AskBranch {
                question,
                arms,
                default,
            } => {
                self.text("question", question, Some(path));
                if arms.is_empty() {
                    self.diags.push(
                        Diagnostic::error(
                            Code::MalformedArgument,
                            "an ask branch needs at least one `when` arm",
                        )
                        .at_path(path.to_string()),
                    );
                }
                let mut seen = BTreeSet::new();
                for (k, arm) in arms.iter().enumerate() {
                    self.text("arm pattern", &arm.pattern, Some(path));
                    let key = fold(&arm.pattern);
                    if key == DEFAULT_ARM {
                        self.diags.push(
                            Diagnostic::error(
                                Code::MalformedArgument,
                                "`default` is reserved and cannot be used as an arm pattern",
                            )
                            .at_path(path.to_string()),
                        );
                    }
                    if !seen.insert(key) {
                        self.diags.push(
                            Diagnostic::error(
                                Code::DuplicateArm,
                                format!("duplicate arm pattern `{}`", arm.pattern),
                            )
                            .at_path(path.to_string()),
                        );
                    }
                    self.block(&arm.body, path, Branch::Arm(k));
                }
                self.block(default, path, Branch::Default);
            }
            Step::Repeat { count, body } => {
                if *count == 0 {
                    self.diags.push(
                        Diagnostic::error(Code::MalformedArgument, "repeat count must be positive")
                            .at_path(path.to_string()),
                    );
                }
                self.loop_body(body, path);
            }
            Step::Forever { body } => {
                self.diags.push(
                    Diagnostic::error(
                        Code::ForeverNotLast,
                        "`forever` is only allowed as the last top-level step",
                    )
                    .at_path(path.to_string()),
                );
                self.block(body, path, Branch::Loop);
            }
        }
    }
}

/// Check a program against the places of a world. An empty result means the
/// program can be deployed.
pub fn validate_program(program: &RobotProgram, catalog: &WorldCatalog) -> Vec<Diagnostic> {
    let mut diags = check_structure(program);
    walk(&program.body, None, &mut |step, path| match step {
        Step::Do(Command::Goto(place)) if catalog.resolve(place).is_none() => diags.push(
            Diagnostic::error(
                Code::UnknownPlace,
                format!(
                    "unknown place `{place}` (known: {})",
                    catalog.places.join(", ")
                ),
            )
            .at_path(path.to_string()),
        ),
        Step::AskBranch { arms, .. } => {
            for arm in arms.iter().filter(|a| a.body.is_empty()) {
                diags.push(
                    Diagnostic::warning(
                        Code::EmptyAskArm,
                        format!("arm `{}` does nothing", arm.pattern),
                    )
                    .at_path(path.to_string()),
                );
            }
        }
        _ => {}
    });
    diags
}

/// Visit every step in preorder with its path.
pub fn walk(block: &Block, parent: Option<(&AstPath, Branch)>, f: &mut impl FnMut(&Step, &AstPath)) {
    for (i, step) in block.iter().enumerate() {
        let path = match parent {
            None => AstPath::top(i),
            Some((p, b)) => p.child(b, i),
        };
        f(step, &path);
        match step {
            Step::Do(_) => {}
            Step::IfHuman { then, otherwise } => {
                walk(then, Some((&path, Branch::Then)), f);
                walk(otherwise, Some((&path, Branch::Else)), f);
            }
            Step::AskBranch { arms, default, .. } => {
                for (k, arm) in arms.iter().enumerate() {
                    walk(&arm.body, Some((&path, Branch::Arm(k))), f);
                }
                walk(default, Some((&path, Branch::Default)), f);
            }
            Step::Repeat { body, .. } | Step::Forever { body } => {
                walk(body, Some((&path, Branch::Loop)), f)
            }
        }
    }
}
