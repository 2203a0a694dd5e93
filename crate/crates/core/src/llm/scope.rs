//! Mechanical checks on generated programs: code/flowchart agreement and
//! confinement of node-scoped edits.

use crate::dsl::{emit_with_spans, RobotProgram};
use crate::flowchart::{ast_to_graph, ast_to_graph_with_map, isomorphic, parse_mermaid, NodeOrigin};

/// The code and the flowchart describe the same graph (ids aside).
pub fn check_coherence(program: &RobotProgram, flowchart: &str) -> Result<(), String> {
    let drawn = parse_mermaid(flowchart).map_err(|e| e.to_string())?;
    isomorphic(&ast_to_graph(program), &drawn).map_err(|diffs| diffs.join("; "))
}

/// Line ranges (end exclusive) of `before`'s canonical text that belong to
/// the given nodes. Start and End nodes own no lines.
pub fn selected_lines(before: &RobotProgram, selection: &[String]) -> Result<Vec<(usize, usize)>, String> {
    let (_, map) = ast_to_graph_with_map(before);
    let (_, spans) = emit_with_spans(before);
    let mut ranges = Vec::new();
    for id in selection {
        let origin = map.get(id).ok_or_else(|| format!("unknown node `{id}`"))?;
        let span = match origin {
            NodeOrigin::Start | NodeOrigin::End => continue,
            NodeOrigin::Entry => (0, 1),
            NodeOrigin::AskQuestion(p) => {
                let (s, _) = spans[p];
                (s, s + 1)
            }
            NodeOrigin::Step(p) | NodeOrigin::AskDecision(p) => spans[p],
        };
        ranges.push(span);
    }
    ranges.sort();
    let mut merged: Vec<(usize, usize)> = Vec::new();
    for (s, e) in ranges {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    Ok(merged)
}

/// Every line of `before` outside the selected nodes' lines appears
/// unchanged and in order in `after`; the selected ranges may be replaced
/// by anything, including nothing.
pub fn check_region_isolation(
    before: &RobotProgram,
    selection: &[String],
    after: &RobotProgram,
) -> Result<(), String> {
    let old_text = emit_with_spans(before).0;
    let new_text = emit_with_spans(after).0;
    let old: Vec<&str> = old_text.lines().collect();
    let new: Vec<&str> = new_text.lines().collect();
    let ranges = selected_lines(before, selection)?;
    let mut kept: Vec<&[&str]> = Vec::new();
    let mut at = 0;
    for (s, e) in &ranges {
        kept.push(&old[at..*s]);
        at = *e;
    }
    kept.push(&old[at..]);

    let outside = |line: usize| format!("line {} changed outside the selected nodes", line + 1);
    // Glob match: kept[0] * kept[1] * ... * kept[n], first and last anchored.
    let first = kept[0];
    if !new.starts_with(first) {
        let i = first.iter().zip(&new).take_while(|(a, b)| a == b).count();
        return Err(outside(i));
    }
    let mut pos = first.len();
    let last = kept.len() - 1;
    if last == 0 {
        return if new.len() == first.len() {
            Ok(())
        } else {
            Err(outside(pos.min(new.len())))
        };
    }
    for seg in &kept[1..last] {
        if seg.is_empty() {
            continue;
        }
        match (pos..=new.len().saturating_sub(seg.len())).find(|&i| new[i..].starts_with(seg)) {
            Some(i) => pos = i + seg.len(),
            None => return Err(outside(pos)),
        }
    }
    let tail = kept[last];
    if new.len() < pos + tail.len() || !new.ends_with(tail) {
        return Err(outside(new.len().saturating_sub(tail.len())));
    }
    Ok(())
}
