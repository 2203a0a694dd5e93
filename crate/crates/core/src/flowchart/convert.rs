use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::graph::{
    DecisionKind, FlowEdge, FlowGraph, FlowNode, LoopKind, NodeKind, DONE, NO, REPEAT, YES,
};
use crate::diagnostic::{has_errors, Code, Diagnostic, Diagnostics};
use crate::dsl::{check_structure, Arm, AstPath, Block, Branch, Command, RobotProgram, Step, DEFAULT_ARM};

/// What part of a program a flowchart node stands for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "origin", content = "path", rename_all = "camelCase")]
pub enum NodeOrigin {
    Start,
    End,
    /// The `userRequest:` entry trigger.
    Entry,
    /// A command, `if human` decision or loop node.
    Step(AstPath),
    /// The `ask:` action that opens an ask branch.
    AskQuestion(AstPath),
    /// The answer decision of an ask branch.
    AskDecision(AstPath),
}

impl NodeOrigin {
    pub fn path(&self) -> Option<&AstPath> {
        match self {
            NodeOrigin::Step(p) | NodeOrigin::AskQuestion(p) | NodeOrigin::AskDecision(p) => {
                Some(p)
            }
            _ => None,
        }
    }
}

pub type NodeMap = HashMap<String, NodeOrigin>;

/// Build the flowchart of a program. Node ids follow a preorder walk of the
/// program: `S` for Start, `n1`, `n2`, ... for the entry trigger and steps,
/// and `E<k>` for the single End node, numbered after the last step.
/// A program ending in `forever` has no End node.
pub fn ast_to_graph(program: &RobotProgram) -> FlowGraph {
    ast_to_graph_with_map(program).0
}

pub fn ast_to_graph_with_map(program: &RobotProgram) -> (FlowGraph, NodeMap) {
    let mut b = Builder {
        nodes: vec![FlowNode::new("S", NodeKind::Start)],
        edges: Vec::new(),
        map: HashMap::from([("S".to_string(), NodeOrigin::Start)]),
        counter: 0,
    };
    let mut open = vec![b.dangle("S", None)];
    if let Some(entry) = &program.entry {
        let id = b.node(
            NodeKind::Action(Command::UserRequest(entry.clone())),
            NodeOrigin::Entry,
        );
        b.connect(&open, &id);
        open = vec![b.dangle(&id, None)];
    }
    let open = b.block(&program.body, None, open);
    if !open.is_empty() {
        let id = format!("E{}", b.counter + 1);
        b.nodes.push(FlowNode::new(id.clone(), NodeKind::End));
        b.map.insert(id.clone(), NodeOrigin::End);
        b.connect(&open, &id);
    }
    (FlowGraph::new(b.nodes, b.edges), b.map)
}

struct Builder {
    nodes: Vec<FlowNode>,
    edges: Vec<FlowEdge>,
    map: NodeMap,
    counter: usize,
}

/// Index of an edge whose target is not known yet.
type Open = Vec<usize>;

impl Builder {
    fn node(&mut self, kind: NodeKind, origin: NodeOrigin) -> String {
        self.counter += 1;
        let id = format!("n{}", self.counter);
        self.nodes.push(FlowNode::new(id.clone(), kind));
        self.map.insert(id.clone(), origin);
        id
    }

    /// Add an edge leaving `from` with the target left blank. Creating edges
    /// eagerly keeps the out-edge order equal to the branch order.
    fn dangle(&mut self, from: &str, label: Option<&str>) -> usize {
        self.edges.push(FlowEdge::new(from, "", label));
        self.edges.len() - 1
    }

    fn connect(&mut self, open: &[usize], to: &str) {
        for &i in open {
            self.edges[i].to = to.to_string();
        }
    }

    fn block(&mut self, block: &Block, parent: Option<(&AstPath, Branch)>, mut open: Open) -> Open {
        for (i, step) in block.iter().enumerate() {
            let path = match parent {
                None => AstPath::top(i),
                Some((p, b)) => p.child(b, i),
            };
            open = self.step(step, &path, open);
        }
        open
    }

    fn step(&mut self, step: &Step, path: &AstPath, open: Open) -> Open {
        match step {
            Step::Do(cmd) => {
                let id = self.node(NodeKind::Action(cmd.clone()), NodeOrigin::Step(path.clone()));
                self.connect(&open, &id);
                vec![self.dangle(&id, None)]
            }
            Step::IfHuman { then, otherwise } => {
                let id = self.node(
                    NodeKind::Decision(DecisionKind::HumanPresent),
                    NodeOrigin::Step(path.clone()),
                );
                self.connect(&open, &id);
                let yes = self.dangle(&id, Some(YES));
                let no = self.dangle(&id, Some(NO));
                let mut out = self.block(then, Some((path, Branch::Then)), vec![yes]);
                out.extend(self.block(otherwise, Some((path, Branch::Else)), vec![no]));
                out
            }
            Step::AskBranch {
                question,
                arms,
                default,
            } => {
                let ask = self.node(
                    NodeKind::Action(Command::Ask(question.clone())),
                    NodeOrigin::AskQuestion(path.clone()),
                );
                self.connect(&open, &ask);
                let to_decision = self.dangle(&ask, None);
                let d = self.node(
                    NodeKind::Decision(DecisionKind::AnswerOf(question.clone())),
                    NodeOrigin::AskDecision(path.clone()),
                );
                self.connect(&[to_decision], &d);
                let arm_edges: Vec<usize> = arms
                    .iter()
                    .map(|a| self.dangle(&d, Some(&a.pattern)))
                    .collect();
                let default_edge = self.dangle(&d, Some(DEFAULT_ARM));
                let mut out = Vec::new();
                for (k, (arm, edge)) in arms.iter().zip(arm_edges).enumerate() {
                    out.extend(self.block(&arm.body, Some((path, Branch::Arm(k))), vec![edge]));
                }
                out.extend(self.block(default, Some((path, Branch::Default)), vec![default_edge]));
                out
            }
            Step::Repeat { count, body } => {
                let id = self.node(
                    NodeKind::Loop(LoopKind::Times(*count)),
                    NodeOrigin::Step(path.clone()),
                );
                self.connect(&open, &id);
                let enter = self.dangle(&id, Some(REPEAT));
                let done = self.dangle(&id, Some(DONE));
                let back = self.block(body, Some((path, Branch::Loop)), vec![enter]);
                self.connect(&back, &id);
                vec![done]
            }
            Step::Forever { body } => {
                let id = self.node(NodeKind::Loop(LoopKind::Forever), NodeOrigin::Step(path.clone()));
                self.connect(&open, &id);
                let enter = self.dangle(&id, Some(REPEAT));
                let back = self.block(body, Some((path, Branch::Loop)), vec![enter]);
                self.connect(&back, &id);
                Vec::new()
            }
        }
    }
}

/// Recover the program a flowchart stands for. Succeeds when the graph is
/// structured: every decision's branches meet again at one node or all end
/// the program, and every cycle runs through a loop node.
pub fn graph_to_ast(graph: &FlowGraph) -> Result<RobotProgram, Diagnostics> {
    graph_to_ast_with_map(graph).map(|(p, _)| p)
}

pub fn graph_to_ast_with_map(graph: &FlowGraph) -> Result<(RobotProgram, NodeMap), Diagnostics> {
    let diags = graph.check();
    if has_errors(&diags) {
        return Err(Diagnostics(diags));
    }
    let x = Extractor::new(graph);
    let (program, map) = x.run()?;
    let diags = check_structure(&program);
    if has_errors(&diags) {
        return Err(Diagnostics(diags));
    }
    let (rebuilt, _) = ast_to_graph_with_map(&program);
    if let Err(nodes) = isomorphic(&rebuilt, graph) {
        return Err(Diagnostics::single(
            Diagnostic::error(
                Code::NonStructuredGraph,
                "the flowchart has no equivalent program; branches must meet again at a single node and loops must return to their loop node",
            )
            .with_nodes(nodes),
        ));
    }
    Ok((program, map))
}

struct Extractor<'g> {
    graph: &'g FlowGraph,
    index: HashMap<&'g str, usize>,
    succ: Vec<Vec<(usize, Option<&'g str>)>>,
    preds: Vec<usize>,
    /// Immediate post-dominator of each node. `exit` stands for the virtual
    /// node after every End; `None` means the node cannot reach the exit.
    ipdom: Vec<Option<usize>>,
    exit: usize,
}

#[derive(Default)]
struct Walk {
    visited: HashSet<usize>,
    map: NodeMap,
}

impl<'g> Extractor<'g> {
    fn new(graph: &'g FlowGraph) -> Self {
        let nodes = graph.nodes();
        let index: HashMap<&str, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.as_str(), i))
            .collect();
        let exit = nodes.len();
        let mut succ = vec![Vec::new(); exit + 1];
        let mut preds = vec![0; exit + 1];
        for e in graph.edges() {
            let (a, b) = (index[e.from.as_str()], index[e.to.as_str()]);
            succ[a].push((b, e.label.as_deref()));
            preds[b] += 1;
        }
        let mut x = Extractor {
            graph,
            index,
            succ,
            preds,
            ipdom: Vec::new(),
            exit,
        };
        x.ipdom = x.post_dominators();
        x
    }

    fn exits_to(&self, i: usize) -> bool {
        matches!(
            self.graph.nodes()[i].kind,
            NodeKind::End | NodeKind::Loop(LoopKind::Forever)
        )
    }

    /// Successors in the post-dominator sense, with End and forever-loop
    /// nodes flowing into the virtual exit.
    fn forward(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.succ[i].iter().map(|&(b, _)| b).collect();
        if i < self.exit && self.exits_to(i) {
            out.push(self.exit);
        }
        out
    }

    /// Iterative dominator computation on the reversed graph.
    fn post_dominators(&self) -> Vec<Option<usize>> {
        let n = self.exit + 1;
        let mut rev: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            for j in self.forward(i) {
                rev[j].push(i);
            }
        }
        // Reverse postorder of the reversed graph, rooted at the exit.
        let mut order = Vec::new();
        let mut seen = vec![false; n];
        let mut stack = vec![(self.exit, 0usize)];
        seen[self.exit] = true;
        while let Some((node, child)) = stack.last_mut() {
            if let Some(&next) = rev[*node].get(*child) {
                *child += 1;
                if !seen[next] {
                    seen[next] = true;
                    stack.push((next, 0));
                }
            } else {
                order.push(*node);
                stack.pop();
            }
        }
        order.reverse();
        let mut rank = vec![usize::MAX; n];
        for (r, &v) in order.iter().enumerate() {
            rank[v] = r;
        }
        let mut idom: Vec<Option<usize>> = vec![None; n];
        idom[self.exit] = Some(self.exit);
        let intersect = |idom: &[Option<usize>], mut a: usize, mut b: usize| {
            while a != b {
                while rank[a] > rank[b] {
                    a = idom[a].expect("processed");
                }
                while rank[b] > rank[a] {
                    b = idom[b].expect("processed");
                }
            }
            a
        };
        let mut changed = true;
        while changed {
            changed = false;
            for &v in order.iter().skip(1) {
                let mut new: Option<usize> = None;
                for p in self.forward(v) {
                    if idom[p].is_none() {
                        continue;
                    }
                    new = Some(match new {
                        None => p,
                        Some(cur) => intersect(&idom, p, cur),
                    });
                }
                if new.is_some() && idom[v] != new {
                    idom[v] = new;
                    changed = true;
                }
            }
        }
        idom[self.exit] = None;
        idom.truncate(self.exit);
        idom
    }

    fn id(&self, i: usize) -> &'g str {
        &self.graph.nodes()[i].id
    }

    fn unstructured(&self, nodes: &[usize], msg: &str) -> Diagnostics {
        Diagnostics::single(
            Diagnostic::error(Code::NonStructuredGraph, msg)
                .with_nodes(nodes.iter().map(|&i| self.id(i))),
        )
    }

    fn only_succ(&self, i: usize) -> usize {
        self.succ[i][0].0
    }

    fn join(&self, i: usize) -> Result<usize, Diagnostics> {
        self.ipdom[i].ok_or_else(|| {
            self.unstructured(&[i], "the branches of this decision never reach an End node")
        })
    }

    fn run(&self) -> Result<(RobotProgram, NodeMap), Diagnostics> {
        let start = self.index[self.graph.start().expect("checked").id.as_str()];
        let mut w = Walk::default();
        w.visited.insert(start);
        w.map.insert(self.id(start).to_string(), NodeOrigin::Start);
        let mut cur = self.only_succ(start);
        let mut entry = None;
        if let NodeKind::Action(Command::UserRequest(word)) = &self.graph.nodes()[cur].kind {
            entry = Some(word.clone());
            w.visited.insert(cur);
            w.map.insert(self.id(cur).to_string(), NodeOrigin::Entry);
            cur = self.only_succ(cur);
        }
        let body = self.block(&mut w, cur, self.exit, None)?;
        for (i, n) in self.graph.nodes().iter().enumerate() {
            if n.kind == NodeKind::End {
                w.map.insert(n.id.clone(), NodeOrigin::End);
            } else if !w.map.contains_key(&n.id) {
                return Err(self.unstructured(&[i], "node is not part of any program step"));
            }
        }
        Ok((RobotProgram { entry, body }, w.map))
    }

    /// Collect the steps from `cur` up to (not including) `stop`.
    fn block(
        &self,
        w: &mut Walk,
        mut cur: usize,
        stop: usize,
        parent: Option<(&AstPath, Branch)>,
    ) -> Result<Block, Diagnostics> {
        let nodes = self.graph.nodes();
        let mut block = Vec::new();
        while cur != stop {
            if cur == self.exit || nodes[cur].kind == NodeKind::End {
                if stop == self.exit {
                    break;
                }
                return Err(self.unstructured(&[cur], "a branch ends the program before its branches meet"));
            }
            if !w.visited.insert(cur) {
                return Err(self.unstructured(
                    &[cur],
                    "node is reached again from a different place; only loop nodes may close a cycle",
                ));
            }
            let path = match parent {
                None => AstPath::top(block.len()),
                Some((p, b)) => p.child(b, block.len()),
            };
            let id = self.id(cur).to_string();
            let (step, next) = match &nodes[cur].kind {
                NodeKind::Action(Command::Ask(q)) if self.is_ask_head(cur) => {
                    let d = self.only_succ(cur);
                    w.visited.insert(d);
                    w.map.insert(id, NodeOrigin::AskQuestion(path.clone()));
                    w.map.insert(self.id(d).to_string(), NodeOrigin::AskDecision(path.clone()));
                    let NodeKind::Decision(DecisionKind::AnswerOf(asked)) = &nodes[d].kind else {
                        unreachable!()
                    };
                    if asked != q {
                        return Err(Diagnostics::single(
                            Diagnostic::error(
                                Code::QuestionMismatch,
                                format!("decision asks about `{asked}` but the ask node says `{q}`"),
                            )
                            .with_nodes([self.id(cur), self.id(d)]),
                        ));
                    }
                    let join = self.join(d)?;
                    let mut arms = Vec::new();
                    let mut default = Vec::new();
                    for &(target, label) in &self.succ[d] {
                        let label = label.unwrap_or_default();
                        if label == DEFAULT_ARM {
                            default = self.block(w, target, join, Some((&path, Branch::Default)))?;
                        } else {
                            let k = arms.len();
                            let body = self.block(w, target, join, Some((&path, Branch::Arm(k))))?;
                            arms.push(Arm {
                                pattern: label.to_string(),
                                body,
                            });
                        }
                    }
                    let step = Step::AskBranch {
                        question: q.clone(),
                        arms,
                        default,
                    };
                    (step, join)
                }
                NodeKind::Action(cmd) => {
                    w.map.insert(id, NodeOrigin::Step(path.clone()));
                    (Step::Do(cmd.clone()), self.only_succ(cur))
                }
                NodeKind::Decision(DecisionKind::HumanPresent) => {
                    w.map.insert(id, NodeOrigin::Step(path.clone()));
                    let join = self.join(cur)?;
                    let mut then = Vec::new();
                    let mut otherwise = Vec::new();
                    for &(target, label) in &self.succ[cur] {
                        if label == Some(YES) {
                            then = self.block(w, target, join, Some((&path, Branch::Then)))?;
                        } else {
                            otherwise = self.block(w, target, join, Some((&path, Branch::Else)))?;
                        }
                    }
                    (Step::IfHuman { then, otherwise }, join)
                }
                NodeKind::Decision(DecisionKind::AnswerOf(_)) => {
                    return Err(self.unstructured(
                        &[cur],
                        "an answer decision must directly follow the ask node that asks its question",
                    ));
                }
                NodeKind::Loop(kind) => {
                    w.map.insert(id, NodeOrigin::Step(path.clone()));
                    let mut body = Vec::new();
                    let mut next = self.exit;
                    for &(target, label) in &self.succ[cur] {
                        if label == Some(REPEAT) {
                            body = self.block(w, target, cur, Some((&path, Branch::Loop)))?;
                        } else {
                            next = target;
                        }
                    }
                    let step = match kind {
                        LoopKind::Times(count) => Step::Repeat {
                            count: *count,
                            body,
                        },
                        LoopKind::Forever => Step::Forever { body },
                    };
                    (step, next)
                }
                NodeKind::Start | NodeKind::End => unreachable!(),
            };
            block.push(step);
            cur = next;
        }
        Ok(block)
    }

    fn is_ask_head(&self, i: usize) -> bool {
        let d = self.only_succ(i);
        matches!(
            self.graph.nodes()[d].kind,
            NodeKind::Decision(DecisionKind::AnswerOf(_))
        ) && self.preds[d] == 1
    }
}

/// Compare two flowcharts up to node ids, End multiplicity and display-only
/// labels. On mismatch returns the ids in `b` where the graphs diverge.
pub fn isomorphic(a: &FlowGraph, b: &FlowGraph) -> Result<(), Vec<String>> {
    let (Some(sa), Some(sb)) = (a.start(), b.start()) else {
        return Err(Vec::new());
    };
    let key = |n: &FlowNode| -> String {
        if n.kind == NodeKind::End {
            "<end>".to_string()
        } else {
            n.id.clone()
        }
    };
    let mut fwd: HashMap<String, String> = HashMap::new();
    let mut back: HashMap<String, String> = HashMap::new();
    let mut stack = vec![(sa, sb)];
    let mut reached_b = HashSet::new();
    while let Some((na, nb)) = stack.pop() {
        let (ka, kb) = (key(na), key(nb));
        reached_b.insert(nb.id.clone());
        match (fwd.get(&ka), back.get(&kb)) {
            (Some(x), Some(y)) if *x == kb && *y == ka => continue,
            (None, None) => {
                fwd.insert(ka.clone(), kb.clone());
                back.insert(kb, ka);
            }
            _ => return Err(vec![nb.id.clone()]),
        }
        if na.kind != nb.kind {
            return Err(vec![nb.id.clone()]);
        }
        let oa: Vec<&FlowEdge> = a.out_edges(&na.id).collect();
        let ob: Vec<&FlowEdge> = b.out_edges(&nb.id).collect();
        if oa.len() != ob.len() {
            return Err(vec![nb.id.clone()]);
        }
        for ea in oa.iter().rev() {
            let Some(eb) = ob.iter().find(|e| e.label == ea.label) else {
                return Err(vec![nb.id.clone()]);
            };
            let (Some(ta), Some(tb)) = (a.node(&ea.to), b.node(&eb.to)) else {
                return Err(vec![nb.id.clone()]);
            };
            stack.push((ta, tb));
        }
    }
    let unreached: Vec<String> = b
        .nodes()
        .iter()
        .filter(|n| !reached_b.contains(&n.id))
        .map(|n| n.id.clone())
        .collect();
    if unreached.is_empty() {
        Ok(())
    } else {
        Err(unreached)
    }
}
