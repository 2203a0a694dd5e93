mod common;

use cocobo_core::dsl::{emit_program, parse_program, AstPath, Branch, Command, Step};
use cocobo_core::flowchart::{
    apply_diff, apply_edit, ast_to_graph, ast_to_graph_with_map, diff_graphs, emit_mermaid,
    fresh_id, graph_to_ast, graph_to_render_json, parse_mermaid, render_json_to_graph, GraphEdit,
    NodeKind, NodeOrigin,
};
use common::{count_steps, depth, program_strategy, random_edits, seeded_program};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn generator_respects_bounds(p in program_strategy()) {
        prop_assert!(count_steps(&p.body) <= 30);
        prop_assert!(depth(&p.body) <= 4);
        prop_assert!(cocobo_core::dsl::check_structure(&p).is_empty());
    }

    #[test]
    fn text_round_trip(p in program_strategy()) {
        let text = emit_program(&p);
        prop_assert_eq!(parse_program(&text).unwrap(), p);
    }

    #[test]
    fn graph_round_trip(p in program_strategy()) {
        let g = ast_to_graph(&p);
        prop_assert!(g.check().is_empty(), "{:?}", g.check());
        prop_assert_eq!(graph_to_ast(&g).unwrap(), p);
    }

    #[test]
    fn three_way_round_trip(p in program_strategy()) {
        let g = ast_to_graph(&p);
        let text = emit_mermaid(&g);
        let parsed = parse_mermaid(&text).unwrap();
        prop_assert_eq!(&parsed, &g);
        prop_assert_eq!(emit_mermaid(&parsed), text);
        prop_assert_eq!(graph_to_ast(&parsed).unwrap(), p.clone());
        let doc = graph_to_render_json(&g);
        let json = serde_json::to_string(&doc).unwrap();
        let back: cocobo_core::flowchart::RenderGraph = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(graph_to_ast(&render_json_to_graph(&back).unwrap()).unwrap(), p);
    }

    #[test]
    fn diff_apply_reproduces_target(seed in any::<u64>(), edits in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_edits(&mut rng, &ast_to_graph(&seeded_program(seed)), edits);
        let b = random_edits(&mut rng, &a, edits);
        let d = diff_graphs(&a, &b);
        prop_assert_eq!(apply_diff(&a, &d), b.clone());
        prop_assert!(diff_graphs(&b, &b).is_empty());
    }

    #[test]
    fn mermaid_round_trip_on_edited_graphs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_edits(&mut rng, &ast_to_graph(&seeded_program(seed)), 3);
        if g.check().is_empty() {
            let g = strip_pending(g);
            prop_assert_eq!(parse_mermaid(&emit_mermaid(&g)).unwrap(), g);
        }
    }

    /// Inserting an action after a command node yields the program with one
    /// extra step right after that command.
    #[test]
    fn single_insert_oracle(p in program_strategy(), pick in any::<prop::sample::Index>()) {
        let (g, map) = ast_to_graph_with_map(&p);
        let mut candidates: Vec<(&str, AstPath)> = g
            .nodes()
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Action(_)))
            .filter_map(|n| match &map[&n.id] {
                NodeOrigin::Step(path) => Some((n.id.as_str(), path.clone())),
                _ => None,
            })
            .collect();
        candidates.sort();
        prop_assume!(!candidates.is_empty());
        let (id, path) = &candidates[pick.index(candidates.len())];
        let e = g.out_edges(id).next().unwrap().clone();
        let edited = apply_edit(&g, &GraphEdit::InsertAction {
            from: e.from, to: e.to, label: e.label,
            id: fresh_id(&g), command: "say: inserted".into(),
        }).unwrap();
        let mut expected = p.clone();
        let (block, index) = path.parent_block_mut(&mut expected).unwrap();
        block.insert(index + 1, Step::say("inserted"));
        prop_assert_eq!(graph_to_ast(&edited).unwrap(), expected);
    }

    /// Inserting an action on a branch edge puts it first in that branch.
    #[test]
    fn branch_insert_oracle(p in program_strategy(), pick in any::<prop::sample::Index>()) {
        let (g, map) = ast_to_graph_with_map(&p);
        let mut candidates = Vec::new();
        for e in g.edges() {
            let origin = &map[&e.from];
            let branch = match (&g.node(&e.from).unwrap().kind, e.label.as_deref()) {
                (NodeKind::Decision(cocobo_core::flowchart::DecisionKind::HumanPresent), Some("yes")) => Branch::Then,
                (NodeKind::Decision(cocobo_core::flowchart::DecisionKind::HumanPresent), Some("no")) => Branch::Else,
                (NodeKind::Loop(_), Some("repeat")) => Branch::Loop,
                (NodeKind::Decision(_), Some("default")) => Branch::Default,
                (NodeKind::Decision(_), Some(l)) => {
                    let step = origin.path().unwrap().resolve(&p).unwrap();
                    let Step::AskBranch { arms, .. } = step else { unreachable!() };
                    Branch::Arm(arms.iter().position(|a| a.pattern == l).unwrap())
                }
                _ => continue,
            };
            candidates.push((e.clone(), origin.path().unwrap().clone(), branch));
        }
        prop_assume!(!candidates.is_empty());
        let (e, path, branch) = candidates[pick.index(candidates.len())].clone();
        let edited = apply_edit(&g, &GraphEdit::InsertAction {
            from: e.from, to: e.to, label: e.label,
            id: fresh_id(&g), command: "humanDetection".into(),
        }).unwrap();
        let mut expected = p.clone();
        let (block, _) = path.child(branch, 0).parent_block_mut(&mut expected).unwrap();
        block.insert(0, Step::Do(Command::HumanDetection));
        prop_assert_eq!(graph_to_ast(&edited).unwrap(), expected);
    }
}

fn strip_pending(g: cocobo_core::flowchart::FlowGraph) -> cocobo_core::flowchart::FlowGraph {
    let (mut nodes, edges) = g.into_parts();
    for n in &mut nodes {
        n.pending = None;
    }
    cocobo_core::flowchart::FlowGraph::new(nodes, edges)
}

#[test]
fn emission_is_deterministic() {
    for seed in 0..50 {
        let p = seeded_program(seed);
        assert_eq!(emit_mermaid(&ast_to_graph(&p)), emit_mermaid(&ast_to_graph(&p.clone())));
    }
}

