use std::fmt;

use serde::{Deserialize, Serialize};

/// One primitive robot command. The set is closed: these five are the only
/// things a robot program can ask the robot to do.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "command", content = "arg", rename_all = "camelCase")]
pub enum Command {
    UserRequest(String),
    Goto(String),
    Say(String),
    Ask(String),
    HumanDetection,
}

impl Command {
    pub const KEYWORDS: [&'static str; 5] = ["userRequest", "goto", "say", "ask", "humanDetection"];

    pub fn keyword(&self) -> &'static str {
        match self {
            Command::UserRequest(_) => "userRequest",
            Command::Goto(_) => "goto",
            Command::Say(_) => "say",
            Command::Ask(_) => "ask",
            Command::HumanDetection => "humanDetection",
        }
    }

    pub fn payload(&self) -> Option<&str> {
        match self {
            Command::UserRequest(s) | Command::Goto(s) | Command::Say(s) | Command::Ask(s) => {
                Some(s)
            }
            Command::HumanDetection => None,
        }
    }

    /// Build a command from a canonical keyword and its payload.
    pub(crate) fn from_parts(keyword: &str, payload: Option<String>) -> Option<Command> {
        Some(match (keyword, payload) {
            ("userRequest", Some(p)) => Command::UserRequest(p),
            ("goto", Some(p)) => Command::Goto(p),
            ("say", Some(p)) => Command::Say(p),
            ("ask", Some(p)) => Command::Ask(p),
            ("humanDetection", None) => Command::HumanDetection,
            _ => return None,
        })
    }
}

/// Renders the canonical CocoScript line, e.g. `say: hello`.
impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.payload() {
            Some(p) => write!(f, "{}: {}", self.keyword(), p),
            None => f.write_str(self.keyword()),
        }
    }
}

pub type Block = Vec<Step>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arm {
    pub pattern: String,
    pub body: Block,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Step {
    Do(Command),
    IfHuman {
        then: Block,
        #[serde(rename = "else")]
        otherwise: Block,
    },
    AskBranch {
        question: String,
        arms: Vec<Arm>,
        default: Block,
    },
    Repeat {
        count: u32,
        body: Block,
    },
    Forever {
        body: Block,
    },
}

impl Step {
    pub fn say(s: impl Into<String>) -> Step {
        Step::Do(Command::Say(s.into()))
    }

    pub fn goto(s: impl Into<String>) -> Step {
        Step::Do(Command::Goto(s.into()))
    }

    pub fn ask(s: impl Into<String>) -> Step {
        Step::Do(Command::Ask(s.into()))
    }
}

/// A complete robot task: an optional wake-word trigger followed by a body.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct RobotProgram {
    /// Wake word of the leading `userRequest:` line, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry: Option<String>,
    pub body: Block,
}

impl RobotProgram {
    pub fn new(body: Block) -> Self {
        RobotProgram { entry: None, body }
    }

    pub fn with_entry(entry: impl Into<String>, body: Block) -> Self {
        RobotProgram {
            entry: Some(entry.into()),
            body,
        }
    }

    /// Every `Goto` target in program order, duplicates included.
    pub fn places(&self) -> Vec<&str> {
        fn walk<'a>(block: &'a [Step], out: &mut Vec<&'a str>) {
            for step in block {
                match step {
                    Step::Do(Command::Goto(p)) => out.push(p),
                    Step::Do(_) => {}
                    Step::IfHuman { then, otherwise } => {
                        walk(then, out);
                        walk(otherwise, out);
                    }
                    Step::AskBranch { arms, default, .. } => {
                        for arm in arms {
                            walk(&arm.body, out);
                        }
                        walk(default, out);
                    }
                    Step::Repeat { body, .. } | Step::Forever { body } => walk(body, out),
                }
            }
        }
        let mut out = Vec::new();
        walk(&self.body, &mut out);
        out
    }
}

/// Case-folded, whitespace-trimmed form used to compare arm patterns, wake
/// words and replies.
pub fn fold(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Reserved edge label for the fall-through arm of an ask branch.
pub const DEFAULT_ARM: &str = "default";

/// Which child block of a step a path segment descends into.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Branch {
    Then,
    Else,
    Arm(usize),
    Default,
    Loop,
}

/// Address of a step inside a program: the index in the top-level body,
/// followed by (branch, index) pairs for each nesting level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct AstPath {
    pub root: usize,
    pub nested: Vec<(Branch, usize)>,
}

impl AstPath {
    pub fn top(root: usize) -> Self {
        AstPath {
            root,
            nested: Vec::new(),
        }
    }

    pub fn child(&self, branch: Branch, index: usize) -> Self {
        let mut p = self.clone();
        p.nested.push((branch, index));
        p
    }

    /// True if `self` is `other` or lies inside it.
    pub fn starts_with(&self, other: &AstPath) -> bool {
        self.root == other.root
            && self.nested.len() >= other.nested.len()
            && self.nested[..other.nested.len()] == other.nested[..]
    }

    pub fn resolve<'a>(&self, program: &'a RobotProgram) -> Option<&'a Step> {
        let mut step = program.body.get(self.root)?;
        for (branch, index) in &self.nested {
            let block = child_block(step, *branch)?;
            step = block.get(*index)?;
        }
        Some(step)
    }

    pub fn resolve_mut<'a>(&self, program: &'a mut RobotProgram) -> Option<&'a mut Step> {
        let mut step = program.body.get_mut(self.root)?;
        for (branch, index) in &self.nested {
            let block = child_block_mut(step, *branch)?;
            step = block.get_mut(*index)?;
        }
        Some(step)
    }

    /// The block containing the addressed step together with its index.
    pub fn parent_block_mut<'a>(
        &self,
        program: &'a mut RobotProgram,
    ) -> Option<(&'a mut Block, usize)> {
        match self.nested.split_last() {
            None => Some((&mut program.body, self.root)),
            Some(((branch, index), prefix)) => {
                let parent = AstPath {
                    root: self.root,
                    nested: prefix.to_vec(),
                };
                let step = parent.resolve_mut(program)?;
                Some((child_block_mut(step, *branch)?, *index))
            }
        }
    }
}

fn child_block(step: &Step, branch: Branch) -> Option<&Block> {
    match (step, branch) {
        (Step::IfHuman { then, .. }, Branch::Then) => Some(then),
        (Step::IfHuman { otherwise, .. }, Branch::Else) => Some(otherwise),
        (Step::AskBranch { arms, .. }, Branch::Arm(k)) => arms.get(k).map(|a| &a.body),
        (Step::AskBranch { default, .. }, Branch::Default) => Some(default),
        (Step::Repeat { body, .. } | Step::Forever { body }, Branch::Loop) => Some(body),
        _ => None,
    }
}

fn child_block_mut(step: &mut Step, branch: Branch) -> Option<&mut Block> {
    match (step, branch) {
        (Step::IfHuman { then, .. }, Branch::Then) => Some(then),
        (Step::IfHuman { otherwise, .. }, Branch::Else) => Some(otherwise),
        (Step::AskBranch { arms, .. }, Branch::Arm(k)) => arms.get_mut(k).map(|a| &mut a.body),
        (Step::AskBranch { default, .. }, Branch::Default) => Some(default),
        (Step::Repeat { body, .. } | Step::Forever { body }, Branch::Loop) => Some(body),
        _ => None,
    }
}

impl fmt::Display for AstPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "body[{}]", self.root)?;
        for (branch, index) in &self.nested {
            match branch {
                Branch::Then => write!(f, ".then[{index}]")?,
                Branch::Else => write!(f, ".else[{index}]")?,
                Branch::Arm(k) => write!(f, ".arm{k}[{index}]")?,
                Branch::Default => write!(f, ".default[{index}]")?,
                Branch::Loop => write!(f, ".loop[{index}]")?,
            }
        }
        Ok(())
    }
}
