use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::graph::{FlowEdge, FlowGraph, FlowNode, NodeKind, Shape};
use crate::diagnostic::{has_errors, Code, Diagnostic, Diagnostics};

pub const RENDER_SCHEMA: &str = "renderGraph/v1";

/// Layout-free flowchart document exchanged with the editor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderGraph {
    pub schema: String,
    pub nodes: Vec<RenderNode>,
    pub edges: Vec<RenderEdge>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderNode {
    pub id: String,
    pub kind: String,
    pub label: String,
    pub props: NodeProps,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeProps {
    /// Natural-language description of what the node does. Editing it away
    /// from the generated text marks the node with a pending behavior change.
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderEdge {
    pub source: String,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn kind_name(kind: &NodeKind) -> &'static str {
    match kind {
        NodeKind::Start => "start",
        NodeKind::End => "end",
        NodeKind::Action(_) => "action",
        NodeKind::Decision(_) => "decision",
        NodeKind::Loop(_) => "loop",
    }
}

pub fn graph_to_render_json(graph: &FlowGraph) -> RenderGraph {
    RenderGraph {
        schema: RENDER_SCHEMA.to_string(),
        nodes: graph
            .nodes()
            .iter()
            .map(|n| RenderNode {
                id: n.id.clone(),
                kind: kind_name(&n.kind).to_string(),
                label: n.label.clone(),
                props: NodeProps {
                    description: n.pending.clone().unwrap_or_else(|| n.kind.describe()),
                },
            })
            .collect(),
        edges: graph
            .edges()
            .iter()
            .map(|e| RenderEdge {
                source: e.from.clone(),
                target: e.to.clone(),
                label: e.label.clone(),
            })
            .collect(),
    }
}

pub fn render_json_to_graph(doc: &RenderGraph) -> Result<FlowGraph, Diagnostics> {
    let mut diags = Vec::new();
    if doc.schema != RENDER_SCHEMA {
        diags.push(Diagnostic::error(
            Code::SchemaViolation,
            format!("unsupported schema `{}`, expected `{RENDER_SCHEMA}`", doc.schema),
        ));
    }
    let mut nodes = Vec::new();
    let mut seen = HashSet::new();
    for n in &doc.nodes {
        if !seen.insert(n.id.as_str()) {
            diags.push(
                Diagnostic::error(Code::DuplicateNodeId, format!("duplicate node id `{}`", n.id))
                    .with_nodes([n.id.as_str()]),
            );
            continue;
        }
        let node = match n.kind.as_str() {
            "start" => Ok(FlowNode {
                label: n.label.clone(),
                ..FlowNode::new(n.id.clone(), NodeKind::Start)
            }),
            "end" => Ok(FlowNode {
                label: n.label.clone(),
                ..FlowNode::new(n.id.clone(), NodeKind::End)
            }),
            "action" => FlowNode::from_shape(&n.id, Shape::Rect, &n.label),
            "decision" => FlowNode::from_shape(&n.id, Shape::Diamond, &n.label),
            "loop" => FlowNode::from_shape(&n.id, Shape::Hexagon, &n.label),
            other => Err(Diagnostic::error(
                Code::SchemaViolation,
                format!("unknown node kind `{other}`"),
            )
            .with_nodes([n.id.as_str()])),
        };
        match node {
            Ok(mut node) => {
                if n.props.description != node.kind.describe() {
                    node.pending = Some(n.props.description.clone());
                }
                nodes.push(node);
            }
            Err(d) => diags.push(d),
        }
    }
    for e in &doc.edges {
        for end in [&e.source, &e.target] {
            if !seen.contains(end.as_str()) {
                diags.push(
                    Diagnostic::error(
                        Code::SchemaViolation,
                        format!("edge {} -> {} references missing node `{end}`", e.source, e.target),
                    )
                    .with_nodes([end.as_str()]),
                );
            }
        }
    }
    if has_errors(&diags) {
        return Err(Diagnostics(diags));
    }
    let edges = doc
        .edges
        .iter()
        .map(|e| FlowEdge {
            from: e.source.clone(),
            to: e.target.clone(),
            label: e.label.clone(),
        })
        .collect();
    let graph = FlowGraph::new(nodes, edges);
    let diags = graph.check();
    if has_errors(&diags) {
        return Err(Diagnostics(diags));
    }
    Ok(graph)
}

/// Parse a render document from JSON text; malformed JSON is a schema
/// violation.
pub fn parse_render_json(text: &str) -> Result<FlowGraph, Diagnostics> {
    let doc: RenderGraph = serde_json::from_str(text).map_err(|e| {
        Diagnostics::single(Diagnostic::error(
            Code::SchemaViolation,
            format!("invalid render document: {e}"),
        ))
    })?;
    render_json_to_graph(&doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::parse_program;
    use crate::flowchart::ast_to_graph;

    fn sample() -> FlowGraph {
        ast_to_graph(
            &parse_program("userRequest: hi\nask: where?\nwhen lab:\n  goto: Lab\nend\nrepeat 2:\n  say: x\nend\n")
                .unwrap(),
        )
    }

    #[test]
    fn identity() {
        let g = sample();
        let doc = graph_to_render_json(&g);
        assert_eq!(render_json_to_graph(&doc).unwrap(), g);
        let text = serde_json::to_string(&doc).unwrap();
        assert_eq!(parse_render_json(&text).unwrap(), g);
    }

    #[test]
    fn missing_node_reference() {
        let mut doc = graph_to_render_json(&sample());
        doc.edges[0].target = "ghost".into();
        let err = render_json_to_graph(&doc).unwrap_err();
        assert!(err.has_code(Code::SchemaViolation));
    }

    #[test]
    fn description_edit_becomes_pending() {
        let g = sample();
        let mut doc = graph_to_render_json(&g);
        let i = doc.nodes.iter().position(|n| n.kind == "action" && n.id != "n1").unwrap();
        doc.nodes[i].props.description = "say it twice".into();
        let edited = render_json_to_graph(&doc).unwrap();
        for (a, b) in g.nodes().iter().zip(edited.nodes()) {
            if a.id == doc.nodes[i].id {
                assert_eq!(b.pending.as_deref(), Some("say it twice"));
                assert_eq!(FlowNode { pending: None, ..b.clone() }, *a);
            } else {
                assert_eq!(a, b);
            }
        }
        assert_eq!(edited.edges(), g.edges());
        assert_eq!(graph_to_render_json(&edited), doc);
    }

    #[test]
    fn bad_kind_and_schema() {
        let mut doc = graph_to_render_json(&sample());
        doc.schema = "renderGraph/v0".into();
        doc.nodes[1].kind = "cloud".into();
        let err = render_json_to_graph(&doc).unwrap_err();
        assert_eq!(err.0.len(), 2);
        assert!(err.0.iter().all(|d| d.code == Code::SchemaViolation));
        assert!(parse_render_json("{").unwrap_err().has_code(Code::SchemaViolation));
    }
}
