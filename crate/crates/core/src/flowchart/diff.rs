use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::graph::{FlowEdge, FlowGraph, FlowNode};

/// Changes between two flowcharts, matching nodes by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GraphDiff {
    pub added_nodes: Vec<FlowNode>,
    pub removed_nodes: Vec<String>,
    /// New versions of nodes whose kind, label or pending note changed.
    pub relabeled_nodes: Vec<FlowNode>,
    pub added_edges: Vec<FlowEdge>,
    pub removed_edges: Vec<FlowEdge>,
}

impl GraphDiff {
    pub fn is_empty(&self) -> bool {
        self.added_nodes.is_empty()
            && self.removed_nodes.is_empty()
            && self.relabeled_nodes.is_empty()
            && self.added_edges.is_empty()
            && self.removed_edges.is_empty()
    }

    /// Ids of nodes that were added or changed.
    pub fn touched_nodes(&self) -> Vec<&str> {
        self.added_nodes
            .iter()
            .chain(&self.relabeled_nodes)
            .map(|n| n.id.as_str())
            .collect()
    }
}

pub fn diff_graphs(before: &FlowGraph, after: &FlowGraph) -> GraphDiff {
    let old: HashMap<&str, &FlowNode> = before.nodes().iter().map(|n| (n.id.as_str(), n)).collect();
    let new: HashMap<&str, &FlowNode> = after.nodes().iter().map(|n| (n.id.as_str(), n)).collect();
    let mut diff = GraphDiff::default();
    for n in before.nodes() {
        if !new.contains_key(n.id.as_str()) {
            diff.removed_nodes.push(n.id.clone());
        }
    }
    for n in after.nodes() {
        match old.get(n.id.as_str()) {
            None => diff.added_nodes.push(n.clone()),
            Some(o) if *o != n => diff.relabeled_nodes.push(n.clone()),
            Some(_) => {}
        }
    }
    // Edge order per source is significant (it orders ask arms), so keep the
    // longest prefix of the new list that survives in order, and re-add the
    // rest at the end.
    let mut sources: Vec<&str> = Vec::new();
    let mut seen = HashSet::new();
    for e in before.edges().iter().chain(after.edges()) {
        if seen.insert(e.from.as_str()) {
            sources.push(&e.from);
        }
    }
    for src in sources {
        let a: Vec<&FlowEdge> = before.out_edges(src).collect();
        let b: Vec<&FlowEdge> = after.out_edges(src).collect();
        let mut kept = 0;
        let mut j = 0;
        for e in &b {
            match a[j..].iter().position(|x| x == e) {
                Some(k) => {
                    j += k + 1;
                    kept += 1;
                }
                None => break,
            }
        }
        let keep: HashSet<&FlowEdge> = b[..kept].iter().copied().collect();
        diff.removed_edges
            .extend(a.iter().filter(|e| !keep.contains(*e)).map(|e| (*e).clone()));
        diff.added_edges.extend(b[kept..].iter().map(|e| (*e).clone()));
    }
    diff
}

pub fn apply_diff(graph: &FlowGraph, diff: &GraphDiff) -> FlowGraph {
    let removed: HashSet<&str> = diff.removed_nodes.iter().map(String::as_str).collect();
    let relabeled: HashMap<&str, &FlowNode> = diff
        .relabeled_nodes
        .iter()
        .map(|n| (n.id.as_str(), n))
        .collect();
    let mut nodes: Vec<FlowNode> = graph
        .nodes()
        .iter()
        .filter(|n| !removed.contains(n.id.as_str()))
        .map(|n| relabeled.get(n.id.as_str()).map_or_else(|| n.clone(), |r| (*r).clone()))
        .collect();
    nodes.extend(diff.added_nodes.iter().cloned());
    let gone: HashSet<&FlowEdge> = diff.removed_edges.iter().collect();
    let mut edges: Vec<FlowEdge> = graph
        .edges()
        .iter()
        .filter(|e| !gone.contains(e))
        .cloned()
        .collect();
    edges.extend(diff.added_edges.iter().cloned());
    FlowGraph::new(nodes, edges)
}
