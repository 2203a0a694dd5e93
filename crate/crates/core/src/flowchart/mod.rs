//! Flowchart form of a robot program and its text and JSON encodings.
//!
//! A [`FlowGraph`] has one node per command. `if human` becomes a decision
//! with `yes`/`no` edges, an ask branch becomes an `ask:` action followed by
//! an answer decision with one edge per arm plus `default`, and loops become
//! a loop node whose `repeat` edge enters the body and whose `done` edge
//! continues after it.

mod convert;
mod diff;
mod edit;
mod graph;
mod mermaid;
mod render;

pub use convert::{
    ast_to_graph, ast_to_graph_with_map, graph_to_ast, graph_to_ast_with_map, isomorphic, NodeMap,
    NodeOrigin,
};
pub use diff::{apply_diff, diff_graphs, GraphDiff};
pub use edit::{action_command, apply_edit, fresh_id, GraphEdit};
pub use graph::{
    cmp_ids, valid_id, DecisionKind, FlowEdge, FlowGraph, FlowNode, LoopKind, NodeKind, Shape,
    DONE, NO, REPEAT, YES,
};
pub use mermaid::{emit_mermaid, parse_mermaid, parse_mermaid_with_warnings};
pub use render::{
    graph_to_render_json, parse_render_json, render_json_to_graph, NodeProps, RenderEdge,
    RenderGraph, RenderNode, RENDER_SCHEMA,
};
