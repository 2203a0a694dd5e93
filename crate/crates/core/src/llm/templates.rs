//! Versioned prompt templates, one file per chain step.

pub const VERSION: u32 = 1;

/// Template text for a step name.
pub fn text(step: &str) -> Option<&'static str> {
    Some(match step {
        "requirements" => include_str!("../../templates/requirements.v1.txt"),
        "generate" => include_str!("../../templates/generate.v1.txt"),
        "modify" => include_str!("../../templates/modify.v1.txt"),
        "explain" => include_str!("../../templates/explain.v1.txt"),
        "debug" => include_str!("../../templates/debug.v1.txt"),
        "node_edit" => include_str!("../../templates/node_edit.v1.txt"),
        _ => return None,
    })
}
