//! Small graph edits of the kind a user makes in the flowchart editor.

use serde::{Deserialize, Serialize};

use super::graph::{FlowEdge, FlowGraph, FlowNode, NodeKind};
use crate::diagnostic::{Code, Diagnostic};
use crate::dsl::Command;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "camelCase")]
pub enum GraphEdit {
    /// Put a new action node in the middle of an existing edge.
    InsertAction {
        from: String,
        to: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
        id: String,
        command: String,
    },
    /// Delete an action node, reconnecting its predecessors to its successor.
    RemoveAction { id: String },
    /// Replace an action node's command text.
    Relabel { id: String, command: String },
    /// Edit the natural-language description of a node.
    Describe { id: String, text: String },
    AddEdge {
        from: String,
        to: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    RemoveEdge {
        from: String,
        to: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

fn missing(what: &str) -> Diagnostic {
    Diagnostic::error(Code::MissingNode, format!("{what} does not exist"))
}

fn action(id: &str, command: &str) -> Result<FlowNode, Diagnostic> {
    let cmd = crate::dsl::parse_command(command).map_err(|d| d.with_nodes([id]))?;
    Ok(FlowNode::new(id, NodeKind::Action(cmd)))
}

/// Apply one edit. The result is not checked against the flowchart
/// invariants; converting it back to a program does that.
pub fn apply_edit(graph: &FlowGraph, edit: &GraphEdit) -> Result<FlowGraph, Diagnostic> {
    let (mut nodes, mut edges) = graph.clone().into_parts();
    let find_edge = |edges: &[FlowEdge], from: &str, to: &str, label: &Option<String>| {
        edges
            .iter()
            .position(|e| e.from == from && e.to == to && e.label == *label)
            .ok_or_else(|| missing(&format!("edge {from} -> {to}")))
    };
    match edit {
        GraphEdit::InsertAction {
            from,
            to,
            label,
            id,
            command,
        } => {
            if graph.node(id).is_some() {
                return Err(Diagnostic::error(
                    Code::DuplicateNodeId,
                    format!("node `{id}` already exists"),
                )
                .with_nodes([id.as_str()]));
            }
            let i = find_edge(&edges, from, to, label)?;
            nodes.push(action(id, command)?);
            edges[i].to = id.clone();
            edges.push(FlowEdge::new(id.clone(), to.clone(), None));
        }
        GraphEdit::RemoveAction { id } => {
            let node = graph.node(id).ok_or_else(|| missing(&format!("node `{id}`")))?;
            if !matches!(node.kind, NodeKind::Action(_)) {
                return Err(Diagnostic::error(
                    Code::InvalidArity,
                    format!("only action nodes can be removed, `{id}` is not one"),
                )
                .with_nodes([id.as_str()]));
            }
            let next = graph.out_edges(id).next().map(|e| e.to.clone());
            nodes.retain(|n| n.id != *id);
            edges.retain(|e| e.from != *id);
            for e in edges.iter_mut().filter(|e| e.to == *id) {
                match &next {
                    Some(n) => e.to = n.clone(),
                    None => e.to = id.clone(),
                }
            }
        }
        GraphEdit::Relabel { id, command } => {
            let i = nodes
                .iter()
                .position(|n| n.id == *id)
                .ok_or_else(|| missing(&format!("node `{id}`")))?;
            let pending = nodes[i].pending.take();
            nodes[i] = action(id, command)?;
            nodes[i].pending = pending;
        }
        GraphEdit::Describe { id, text } => {
            let node = nodes
                .iter_mut()
                .find(|n| n.id == *id)
                .ok_or_else(|| missing(&format!("node `{id}`")))?;
            node.pending = (*text != node.kind.describe()).then(|| text.clone());
        }
        GraphEdit::AddEdge { from, to, label } => {
            edges.push(FlowEdge {
                from: from.clone(),
                to: to.clone(),
                label: label.clone(),
            });
        }
        GraphEdit::RemoveEdge { from, to, label } => {
            let i = find_edge(&edges, from, to, label)?;
            edges.remove(i);
        }
    }
    Ok(FlowGraph::new(nodes, edges))
}

/// An id not used by any node, of the form `u<k>`.
pub fn fresh_id(graph: &FlowGraph) -> String {
    (1..)
        .map(|k| format!("u{k}"))
        .find(|id| graph.node(id).is_none())
        .expect("unbounded")
}

/// The command of an action node, if `id` names one.
pub fn action_command<'g>(graph: &'g FlowGraph, id: &str) -> Option<&'g Command> {
    match &graph.node(id)?.kind {
        NodeKind::Action(cmd) => Some(cmd),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_program, Step};
    use crate::flowchart::{ast_to_graph, graph_to_ast};

    #[test]
    fn insert_then_remove_restores_program() {
        let p = parse_program("say: a\ngoto: B\n").unwrap();
        let g = ast_to_graph(&p);
        let id = fresh_id(&g);
        let edited = apply_edit(
            &g,
            &GraphEdit::InsertAction {
                from: "n1".into(),
                to: "n2".into(),
                label: None,
                id: id.clone(),
                command: "say: middle".into(),
            },
        )
        .unwrap();
        let q = graph_to_ast(&edited).unwrap();
        assert_eq!(q.body[1], Step::say("middle"));
        let back = apply_edit(&edited, &GraphEdit::RemoveAction { id }).unwrap();
        assert_eq!(graph_to_ast(&back).unwrap(), p);
    }

    #[test]
    fn describe_sets_and_clears_pending() {
        let g = ast_to_graph(&parse_program("say: a\n").unwrap());
        let e = apply_edit(&g, &GraphEdit::Describe { id: "n1".into(), text: "louder".into() }).unwrap();
        assert_eq!(e.node("n1").unwrap().pending.as_deref(), Some("louder"));
        let text = e.node("n1").unwrap().kind.describe();
        let e = apply_edit(&e, &GraphEdit::Describe { id: "n1".into(), text }).unwrap();
        assert_eq!(e, g);
    }

    #[test]
    fn bad_command_is_rejected() {
        let g = ast_to_graph(&parse_program("say: a\n").unwrap());
        let err = apply_edit(&g, &GraphEdit::Relabel { id: "n1".into(), command: "fly: up".into() }).unwrap_err();
        assert_eq!(err.code, Code::UnknownCommand);
    }
}
