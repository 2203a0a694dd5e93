//! Command-set closure: every route that turns text into commands accepts
//! the five robot commands and nothing else.
#![allow(dead_code)]

use cocobo_core::dsl::{parse_command, parse_program, Command};
use cocobo_core::flowchart::{graph_to_ast, parse_mermaid};
use rand::seq::SliceRandom;
use rand::Rng;

/// Independent list, deliberately not read from the library.
const COMMANDS: [&str; 5] = ["userRequest", "goto", "say", "ask", "humanDetection"];

/// Headers that open, split or close blocks, each shown in a program where
/// it is legal.
pub const STRUCTURAL: [(&str, &str); 8] = [
    ("if human", "if human:\n  say: hi\nend\n"),
    ("else", "if human:\n  say: hi\nelse:\n  say: bye\nend\n"),
    ("repeat", "repeat 2:\n  say: hi\nend\n"),
    ("forever", "say: start\nforever:\n  say: hi\nend\n"),
    ("when", "ask: where?\nwhen lab:\n  say: ok\nend\n"),
    ("otherwise", "ask: where?\nwhen lab:\n  say: ok\notherwise:\n  say: no\nend\n"),
    ("end", "repeat 1:\n  say: hi\nend\n"),
    ("userRequest entry", "userRequest: guide me\nsay: hi\n"),
];

const NEAR_MISSES: [&str; 24] = [
    "go", "goTo_", "gotoo", "go_to", "says", "sayy", "speak", "asks", "question", "human",
    "detection", "humandetect", "userrequests", "request", "move", "wait", "dance", "if",
    "else", "when", "repeat", "forever", "end", "otherwise",
];

fn case_shuffle<R: Rng>(rng: &mut R, w: &str) -> String {
    w.chars()
        .map(|c| if rng.gen() { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() })
        .collect()
}

/// A candidate keyword: a real command in random case, a near miss, or a
/// random identifier.
pub fn random_word<R: Rng>(rng: &mut R) -> String {
    match rng.gen_range(0..3) {
        0 => {
            let w = *COMMANDS.choose(rng).unwrap();
            if rng.gen() { w.to_string() } else { case_shuffle(rng, w) }
        }
        1 => {
            let w = *NEAR_MISSES.choose(rng).unwrap();
            case_shuffle(rng, w)
        }
        _ => {
            let n = rng.gen_range(1..12);
            let w: String = (0..n).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
            case_shuffle(rng, &w)
        }
    }
}

fn is_command_ci(w: &str) -> bool {
    COMMANDS.iter().any(|c| c.eq_ignore_ascii_case(w))
}

/// Check one word against every route. Returns a description of the first
/// disagreement.
pub fn check_word(w: &str) -> Result<(), String> {
    let with_arg = is_command_ci(w) && !w.eq_ignore_ascii_case("humanDetection");
    let bare = w.eq_ignore_ascii_case("humanDetection");

    let line = format!("{w}: x");
    if parse_command(&line).is_ok() != with_arg {
        return Err(format!("parse_command({line:?}) disagrees"));
    }
    if parse_command(w).is_ok() != bare {
        return Err(format!("parse_command({w:?}) disagrees"));
    }

    // Inside a program, after a fixed first step so userRequest is misplaced
    // and therefore never accepted here.
    let ok_in_program = with_arg && !w.eq_ignore_ascii_case("userRequest");
    let src = format!("say: a\n{line}\n");
    if parse_program(&src).is_ok() != ok_in_program {
        return Err(format!("parse_program({src:?}) disagrees"));
    }

    let mmd = format!("flowchart TD\n    S([\"Start\"]) --> n1\n    n1[\"say: a\"] --> n2\n    n2[\"{line}\"] --> E3\n    E3([\"End\"])\n");
    let via_mermaid = parse_mermaid(&mmd).ok().and_then(|g| graph_to_ast(&g).ok());
    if via_mermaid.is_some() != ok_in_program {
        return Err(format!("mermaid label {line:?} disagrees"));
    }

    // The JSON form of a command is exact-case.
    let exact = COMMANDS.contains(&w);
    let json = if w == "humanDetection" {
        serde_json::json!({ "command": w })
    } else {
        serde_json::json!({ "command": w, "arg": "x" })
    };
    if serde_json::from_value::<Command>(json).is_ok() != exact {
        return Err(format!("command JSON with {w:?} disagrees"));
    }
    Ok(())
}

/// Each structural header parses where it is legal.
pub fn check_structural() -> Result<(), String> {
    for (name, src) in STRUCTURAL {
        parse_program(src).map_err(|d| format!("`{name}` rejected: {d}"))?;
    }
    Ok(())
}
