use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::diagnostic::{Code, Diagnostic};
use crate::dsl::{fold, parse_command, Command, DEFAULT_ARM};

pub const YES: &str = "yes";
pub const NO: &str = "no";
pub const REPEAT: &str = "repeat";
pub const DONE: &str = "done";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionKind {
    HumanPresent,
    AnswerOf(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LoopKind {
    Times(u32),
    Forever,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Start,
    End,
    Action(Command),
    Decision(DecisionKind),
    Loop(LoopKind),
}

/// The drawing shape of a node; each kind has exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Stadium,
    Rect,
    Diamond,
    Hexagon,
}

impl NodeKind {
    pub fn shape(&self) -> Shape {
        match self {
            NodeKind::Start | NodeKind::End => Shape::Stadium,
            NodeKind::Action(_) => Shape::Rect,
            NodeKind::Decision(_) => Shape::Diamond,
            NodeKind::Loop(_) => Shape::Hexagon,
        }
    }

    /// The label a freshly generated node of this kind carries.
    pub fn default_label(&self) -> String {
        match self {
            NodeKind::Start => "Start".into(),
            NodeKind::End => "End".into(),
            NodeKind::Action(cmd) => cmd.to_string(),
            NodeKind::Decision(DecisionKind::HumanPresent) => "humanDetection".into(),
            NodeKind::Decision(DecisionKind::AnswerOf(q)) => format!("answer: {q}"),
            NodeKind::Loop(LoopKind::Times(n)) => format!("repeat {n}"),
            NodeKind::Loop(LoopKind::Forever) => "forever".into(),
        }
    }

    /// Natural-language description shown in the node properties panel.
    pub fn describe(&self) -> String {
        match self {
            NodeKind::Start => "The program starts here.".into(),
            NodeKind::End => "The program ends here.".into(),
            NodeKind::Action(Command::UserRequest(w)) => {
                format!("Wait until someone says \"{w}\", then start the service.")
            }
            NodeKind::Action(Command::Goto(p)) => format!("Move to {p}."),
            NodeKind::Action(Command::Say(s)) => format!("Say \"{s}\"."),
            NodeKind::Action(Command::Ask(q)) => format!("Ask \"{q}\" and listen for the reply."),
            NodeKind::Action(Command::HumanDetection) => {
                "Check whether there is a person in front of the robot.".into()
            }
            NodeKind::Decision(DecisionKind::HumanPresent) => {
                "Is there a person in front of the robot? Continue on \"yes\" or \"no\".".into()
            }
            NodeKind::Decision(DecisionKind::AnswerOf(q)) => {
                format!("Choose a path based on the reply to \"{q}\".")
            }
            NodeKind::Loop(LoopKind::Times(n)) => {
                format!("Repeat the steps on the \"repeat\" path {n} times, then continue.")
            }
            NodeKind::Loop(LoopKind::Forever) => {
                "Repeat the steps on the \"repeat\" path forever.".into()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowNode {
    pub id: String,
    pub kind: NodeKind,
    pub label: String,
    /// Natural-language behavior edit entered in the properties panel and
    /// not yet turned into a concrete command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<String>,
}

impl FlowNode {
    pub fn new(id: impl Into<String>, kind: NodeKind) -> Self {
        let label = kind.default_label();
        FlowNode {
            id: id.into(),
            kind,
            label,
            pending: None,
        }
    }

    /// Recover a node from its shape and label, as written in Mermaid text or
    /// a render document. Action, answer-decision and loop labels are
    /// normalized; other labels are kept as written.
    pub fn from_shape(id: &str, shape: Shape, label: &str) -> Result<FlowNode, Diagnostic> {
        let label = label.trim();
        let bad = |msg: String| {
            Err(Diagnostic::error(Code::InvalidLabel, msg).with_nodes([id]))
        };
        let kind = match shape {
            Shape::Stadium if label.eq_ignore_ascii_case("start") => NodeKind::Start,
            Shape::Stadium => NodeKind::End,
            Shape::Rect => match parse_command(label) {
                Ok(cmd) => NodeKind::Action(cmd),
                Err(d) => return Err(d.with_nodes([id])),
            },
            Shape::Diamond => {
                let lower = label.to_ascii_lowercase();
                if let Some(q) = lower.strip_prefix("answer:").map(|_| label[7..].trim()) {
                    if q.is_empty() {
                        return bad("answer decision needs the question text".into());
                    }
                    NodeKind::Decision(DecisionKind::AnswerOf(q.to_string()))
                } else if label.is_empty() {
                    return bad("decision label must not be empty".into());
                } else {
                    NodeKind::Decision(DecisionKind::HumanPresent)
                }
            }
            Shape::Hexagon => {
                let words: Vec<&str> = label.split_whitespace().collect();
                match words.as_slice() {
                    [w] if w.eq_ignore_ascii_case("forever") => NodeKind::Loop(LoopKind::Forever),
                    [w, n] if w.eq_ignore_ascii_case("repeat") => match n.parse::<u32>() {
                        Ok(n) if n > 0 => NodeKind::Loop(LoopKind::Times(n)),
                        _ => return bad(format!("invalid repeat count `{n}`")),
                    },
                    _ => return bad(format!("loop label must be `repeat N` or `forever`, found `{label}`")),
                }
            }
        };
        let label = match &kind {
            NodeKind::Start | NodeKind::End | NodeKind::Decision(DecisionKind::HumanPresent) => {
                label.to_string()
            }
            other => other.default_label(),
        };
        Ok(FlowNode {
            id: id.to_string(),
            kind,
            label,
            pending: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FlowEdge {
    pub from: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl FlowEdge {
    pub fn new(from: impl Into<String>, to: impl Into<String>, label: Option<&str>) -> Self {
        FlowEdge {
            from: from.into(),
            to: to.into(),
            label: label.map(str::to_string),
        }
    }
}

/// A flowchart. Nodes are always kept in canonical order: a topological
/// order of the graph without its back edges, Start first and ties broken by
/// node id. Edges are grouped by source in node order; the relative order of
/// edges leaving one node is preserved (it is the arm order of an answer
/// decision).
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(from = "RawGraph")]
pub struct FlowGraph {
    nodes: Vec<FlowNode>,
    edges: Vec<FlowEdge>,
}

#[derive(Deserialize)]
struct RawGraph {
    nodes: Vec<FlowNode>,
    edges: Vec<FlowEdge>,
}

impl From<RawGraph> for FlowGraph {
    fn from(raw: RawGraph) -> Self {
        FlowGraph::new(raw.nodes, raw.edges)
    }
}

impl FlowGraph {
    pub fn new(nodes: Vec<FlowNode>, edges: Vec<FlowEdge>) -> Self {
        let mut g = FlowGraph { nodes, edges };
        g.normalize();
        g
    }

    pub fn nodes(&self) -> &[FlowNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[FlowEdge] {
        &self.edges
    }

    pub fn into_parts(self) -> (Vec<FlowNode>, Vec<FlowEdge>) {
        (self.nodes, self.edges)
    }

    pub fn node(&self, id: &str) -> Option<&FlowNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn out_edges<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a FlowEdge> + 'a {
        self.edges.iter().filter(move |e| e.from == id)
    }

    pub fn in_edges<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a FlowEdge> + 'a {
        self.edges.iter().filter(move |e| e.to == id)
    }

    pub fn start(&self) -> Option<&FlowNode> {
        self.nodes.iter().find(|n| n.kind == NodeKind::Start)
    }

    fn normalize(&mut self) {
        let order = canonical_order(&self.nodes, &self.edges);
        let mut slots: Vec<Option<FlowNode>> = std::mem::take(&mut self.nodes)
            .into_iter()
            .map(Some)
            .collect();
        self.nodes = order.into_iter().filter_map(|i| slots[i].take()).collect();
        // Duplicated ids leave leftovers behind; keep them at the end so
        // validation can still report them.
        self.nodes.extend(slots.into_iter().flatten());
        let pos: HashMap<&str, usize> = self
            .nodes
            .iter()
            .enumerate()
            .rev()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let key = |e: &FlowEdge| pos.get(e.from.as_str()).copied().unwrap_or(usize::MAX);
        let mut edges = std::mem::take(&mut self.edges);
        edges.sort_by_key(key);
        self.edges = edges;
    }

    /// Check the structural invariants every flowchart must satisfy.
    pub fn check(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let mut ids = HashSet::new();
        for n in &self.nodes {
            if !valid_id(&n.id) {
                diags.push(
                    Diagnostic::error(Code::InvalidNodeId, format!("invalid node id `{}`", n.id))
                        .with_nodes([n.id.as_str()]),
                );
            }
            if !ids.insert(n.id.as_str()) {
                diags.push(
                    Diagnostic::error(Code::DuplicateNodeId, format!("duplicate node id `{}`", n.id))
                        .with_nodes([n.id.as_str()]),
                );
            }
        }
        let mut triples = HashSet::new();
        for e in &self.edges {
            for end in [&e.from, &e.to] {
                if !ids.contains(end.as_str()) {
                    diags.push(
                        Diagnostic::error(
                            Code::MissingNode,
                            format!("edge {} -> {} references unknown node `{end}`", e.from, e.to),
                        )
                        .with_nodes([end.as_str()]),
                    );
                }
            }
            if !triples.insert(e) {
                diags.push(
                    Diagnostic::error(
                        Code::DuplicateEdge,
                        format!("duplicate edge {} -> {}", e.from, e.to),
                    )
                    .with_nodes([e.from.as_str(), e.to.as_str()]),
                );
            }
        }
        if !diags.is_empty() {
            return diags;
        }

        let starts: Vec<&FlowNode> = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Start)
            .collect();
        if starts.len() != 1 {
            diags.push(
                Diagnostic::error(
                    Code::InvalidArity,
                    format!("expected exactly one Start node, found {}", starts.len()),
                )
                .with_nodes(starts.iter().map(|n| n.id.as_str())),
            );
        }
        for n in &self.nodes {
            let out: Vec<&FlowEdge> = self.out_edges(&n.id).collect();
            let id = n.id.as_str();
            let arity = |expected: &str, found: usize| {
                Diagnostic::error(
                    Code::InvalidArity,
                    format!("node `{id}` must have {expected} outgoing edge(s), found {found}"),
                )
                .with_nodes([id])
            };
            match &n.kind {
                NodeKind::Start | NodeKind::Action(_) => {
                    if n.kind == NodeKind::Start && self.in_edges(id).next().is_some() {
                        diags.push(
                            Diagnostic::error(Code::InvalidArity, "Start must have no incoming edges")
                                .with_nodes([id]),
                        );
                    }
                    match out.len() {
                        0 => diags.push(
                            Diagnostic::error(
                                Code::DanglingNode,
                                format!("node `{id}` has no outgoing edge"),
                            )
                            .with_nodes([id]),
                        ),
                        1 => {
                            if out[0].label.is_some() {
                                diags.push(
                                    Diagnostic::error(
                                        Code::InvalidLabel,
                                        format!("edge leaving `{id}` must not be labeled"),
                                    )
                                    .with_nodes([id]),
                                );
                            }
                        }
                        k => diags.push(arity("exactly 1", k)),
                    }
                }
                NodeKind::End => {
                    if !out.is_empty() {
                        diags.push(arity("no", out.len()));
                    }
                }
                NodeKind::Decision(DecisionKind::HumanPresent) => {
                    self.check_labels(n, &out, &[YES, NO], &[], &mut diags);
                }
                NodeKind::Decision(DecisionKind::AnswerOf(_)) => {
                    let mut seen = BTreeSet::new();
                    let mut arms = 0;
                    let mut defaults = 0;
                    for e in &out {
                        match e.label.as_deref().map(str::trim) {
                            None | Some("") => diags.push(
                                Diagnostic::error(
                                    Code::InvalidLabel,
                                    format!("every edge leaving `{id}` needs a label"),
                                )
                                .with_nodes([id]),
                            ),
                            Some(l) if l == DEFAULT_ARM => defaults += 1,
                            Some(l) => {
                                arms += 1;
                                if !seen.insert(fold(l)) || fold(l) == DEFAULT_ARM {
                                    diags.push(
                                        Diagnostic::error(
                                            Code::InvalidLabel,
                                            format!("duplicate or reserved branch label `{l}` on `{id}`"),
                                        )
                                        .with_nodes([id]),
                                    );
                                }
                            }
                        }
                    }
                    if arms == 0 || defaults != 1 {
                        diags.push(
                            Diagnostic::error(
                                Code::MissingDecisionBranch,
                                format!(
                                    "answer decision `{id}` needs at least one arm and exactly one `default` edge"
                                ),
                            )
                            .with_nodes([id]),
                        );
                    }
                }
                NodeKind::Loop(LoopKind::Times(_)) => {
                    self.check_labels(n, &out, &[REPEAT, DONE], &[], &mut diags);
                }
                NodeKind::Loop(LoopKind::Forever) => {
                    self.check_labels(n, &out, &[REPEAT], &[DONE], &mut diags);
                }
            }
        }
        if let Some(start) = starts.first() {
            let reach = self.reachable_from(&start.id);
            for n in &self.nodes {
                if !reach.contains(n.id.as_str()) {
                    diags.push(
                        Diagnostic::error(
                            Code::DanglingNode,
                            format!("node `{}` is not reachable from Start", n.id),
                        )
                        .with_nodes([n.id.as_str()]),
                    );
                }
            }
        }
        diags
    }

    fn check_labels(
        &self,
        n: &FlowNode,
        out: &[&FlowEdge],
        required: &[&str],
        forbidden: &[&str],
        diags: &mut Vec<Diagnostic>,
    ) {
        let id = n.id.as_str();
        for want in required {
            if !out.iter().any(|e| e.label.as_deref() == Some(want)) {
                diags.push(
                    Diagnostic::error(
                        Code::MissingDecisionBranch,
                        format!("node `{id}` is missing its `{want}` edge"),
                    )
                    .with_nodes([id]),
                );
            }
        }
        for e in out {
            let l = e.label.as_deref().unwrap_or("");
            if !required.contains(&l) || forbidden.contains(&l) {
                diags.push(
                    Diagnostic::error(
                        Code::InvalidLabel,
                        format!("unexpected edge label `{l}` leaving `{id}`"),
                    )
                    .with_nodes([id]),
                );
            }
        }
        if out.len() > required.len() {
            diags.push(
                Diagnostic::error(
                    Code::InvalidArity,
                    format!("node `{id}` has {} outgoing edges", out.len()),
                )
                .with_nodes([id]),
            );
        }
    }

    pub fn reachable_from<'a>(&'a self, id: &'a str) -> HashSet<&'a str> {
        let mut seen = HashSet::new();
        let mut stack = vec![id];
        while let Some(cur) = stack.pop() {
            if !seen.insert(cur) {
                continue;
            }
            stack.extend(self.out_edges(cur).map(|e| e.to.as_str()));
        }
        seen
    }
}

pub fn valid_id(id: &str) -> bool {
    let mut chars = id.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Order ids by alphabetic prefix, then numeric suffix, so `n2` < `n10`.
pub fn cmp_ids(a: &str, b: &str) -> Ordering {
    fn split(s: &str) -> (&str, Option<u64>) {
        let cut = s.trim_end_matches(|c: char| c.is_ascii_digit()).len();
        (&s[..cut], s[cut..].parse().ok())
    }
    let (pa, na) = split(a);
    let (pb, nb) = split(b);
    pa.cmp(pb).then(na.cmp(&nb)).then(a.cmp(b))
}

/// Indices of `nodes` in canonical order.
fn canonical_order(nodes: &[FlowNode], edges: &[FlowEdge]) -> Vec<usize> {
    let n = nodes.len();
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, node) in nodes.iter().enumerate() {
        index.entry(node.id.as_str()).or_insert(i);
    }
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in edges {
        if let (Some(&a), Some(&b)) = (index.get(e.from.as_str()), index.get(e.to.as_str())) {
            succ[a].push(b);
        }
    }
    let rank = |i: usize| (nodes[i].kind != NodeKind::Start, i);
    let mut by_id: Vec<usize> = index.values().copied().collect();
    by_id.sort_by(|&a, &b| {
        rank(a)
            .0
            .cmp(&rank(b).0)
            .then_with(|| cmp_ids(&nodes[a].id, &nodes[b].id))
    });

    // Depth-first search marks back edges (edges into a node on the stack).
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let mut mark = vec![Mark::New; n];
    let mut back: HashSet<(usize, usize)> = HashSet::new();
    for &root in &by_id {
        if mark[root] != Mark::New {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = Mark::Active;
        while let Some((node, child)) = stack.last_mut() {
            if let Some(&next) = succ[*node].get(*child) {
                *child += 1;
                let from = *node;
                match mark[next] {
                    Mark::New => {
                        mark[next] = Mark::Active;
                        stack.push((next, 0));
                    }
                    Mark::Active => {
                        back.insert((from, next));
                    }
                    Mark::Done => {}
                }
            } else {
                mark[*node] = Mark::Done;
                stack.pop();
            }
        }
    }

    let mut indegree = vec![0usize; n];
    for (a, targets) in succ.iter().enumerate() {
        for &b in targets {
            if !back.contains(&(a, b)) {
                indegree[b] += 1;
            }
        }
    }
    let position: HashMap<usize, usize> = by_id.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut ready: BTreeSet<usize> = by_id
        .iter()
        .filter(|&&i| indegree[i] == 0)
        .map(|i| position[i])
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(p) = ready.pop_first() {
        let i = by_id[p];
        order.push(i);
        for &b in &succ[i] {
            if back.contains(&(i, b)) {
                continue;
            }
            indegree[b] -= 1;
            if indegree[b] == 0 {
                ready.insert(position[&b]);
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_ordering_is_natural() {
        let mut ids = vec!["n10", "n2", "S", "E3", "n1", "x"];
        ids.sort_by(|a, b| cmp_ids(a, b));
        assert_eq!(ids, vec!["E3", "S", "n1", "n2", "n10", "x"]);
    }

    #[test]
    fn valid_ids() {
        assert!(valid_id("n1"));
        assert!(valid_id("Start_2"));
        assert!(!valid_id("1n"));
        assert!(!valid_id("a-b"));
        assert!(!valid_id(""));
    }

    #[test]
    fn normalization_is_topological_with_start_first() {
        let g = FlowGraph::new(
            vec![
                FlowNode::new("E9", NodeKind::End),
                FlowNode::new("b", NodeKind::Action(Command::Say("b".into()))),
                FlowNode::new("a", NodeKind::Action(Command::Say("a".into()))),
                FlowNode::new("S", NodeKind::Start),
            ],
            vec![
                FlowEdge::new("a", "E9", None),
                FlowEdge::new("b", "a", None),
                FlowEdge::new("S", "b", None),
            ],
        );
        let ids: Vec<&str> = g.nodes().iter().map(|n| n.id.as_str()).collect();
        assert_eq!(ids, vec!["S", "b", "a", "E9"]);
        let froms: Vec<&str> = g.edges().iter().map(|e| e.from.as_str()).collect();
        assert_eq!(froms, vec!["S", "b", "a"]);
        assert!(g.check().is_empty());
    }

    #[test]
    fn shape_recovery() {
        let n = FlowNode::from_shape("x", Shape::Rect, "SAY:  hi").unwrap();
        assert_eq!(n.kind, NodeKind::Action(Command::Say("hi".into())));
        assert_eq!(n.label, "say: hi");
        let d = FlowNode::from_shape("d", Shape::Diamond, "person?").unwrap();
        assert_eq!(d.kind, NodeKind::Decision(DecisionKind::HumanPresent));
        assert_eq!(d.label, "person?");
        let a = FlowNode::from_shape("d", Shape::Diamond, "Answer:  Where?").unwrap();
        assert_eq!(a.kind, NodeKind::Decision(DecisionKind::AnswerOf("Where?".into())));
        let l = FlowNode::from_shape("l", Shape::Hexagon, "repeat 3").unwrap();
        assert_eq!(l.kind, NodeKind::Loop(LoopKind::Times(3)));
        assert!(FlowNode::from_shape("l", Shape::Hexagon, "loop").is_err());
        assert!(FlowNode::from_shape("r", Shape::Rect, "jump: now").is_err());
    }

    #[test]
    fn invariant_violations_are_reported() {
        let g = FlowGraph::new(
            vec![
                FlowNode::new("S", NodeKind::Start),
                FlowNode::new("d", NodeKind::Decision(DecisionKind::HumanPresent)),
                FlowNode::new("E", NodeKind::End),
                FlowNode::new("lonely", NodeKind::Action(Command::Say("x".into()))),
            ],
            vec![
                FlowEdge::new("S", "d", None),
                FlowEdge::new("d", "E", Some(YES)),
                FlowEdge::new("lonely", "E", None),
            ],
        );
        let codes: Vec<Code> = g.check().iter().map(|d| d.code).collect();
        assert!(codes.contains(&Code::MissingDecisionBranch));
        assert!(codes.contains(&Code::DanglingNode));
    }
}
