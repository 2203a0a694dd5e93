mod common;

use std::collections::BTreeSet;

use cocobo_core::dsl::emit_program;
use cocobo_core::flowchart::{ast_to_graph, emit_mermaid};
use cocobo_core::llm::*;
use proptest::prelude::*;

fn body_for(tag: Tag, seed: u64) -> String {
    let program = common::seeded_program(seed);
    match tag {
        Tag::Code => emit_program(&program),
        Tag::Flowchart => emit_mermaid(&ast_to_graph(&program)),
        Tag::Requirements => "1. Go to the Office.\n2. Say hello.".into(),
        Tag::ModifiedNodes => "n1, n2".into(),
        Tag::Explanation => "It walks < 10 m & says hi.".into(),
        Tag::Question => "Which room?".into(),
        Tag::Answer => "Because you asked.".into(),
    }
}

fn tag_subset() -> impl Strategy<Value = Vec<Tag>> {
    proptest::sample::subsequence(Tag::ALL.to_vec(), 0..=Tag::ALL.len()).prop_shuffle()
}

/// Routing table written out case by case.
fn expected_route(tags: &BTreeSet<Tag>) -> Option<Intent> {
    let code = tags.contains(&Tag::Code);
    let reqs = tags.contains(&Tag::Requirements);
    let question = tags.contains(&Tag::Question);
    let chart = tags.contains(&Tag::Flowchart);
    let nodes = tags.contains(&Tag::ModifiedNodes);
    if code {
        if question || reqs {
            return None;
        }
        return Some(Intent::Modify);
    }
    if chart || nodes {
        return None;
    }
    if reqs {
        return if question { None } else { Some(Intent::ConfirmPending) };
    }
    if question {
        return Some(Intent::AskBack);
    }
    Some(Intent::Explain)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn tagged_text_round_trips(tags in tag_subset(), seed in any::<u64>(), prose in proptest::option::of("[A-Za-z ,.!]{1,20}")) {
        let mut raw = String::new();
        if let Some(p) = &prose {
            raw.push_str(p);
            raw.push('\n');
        }
        for t in &tags {
            raw.push_str(&format!("<{t}>\n{}\n</{t}>\n", body_for(*t, seed)));
        }
        match parse_tagged_output(&raw) {
            Ok(resp) => {
                let explicit: Vec<(Tag, String)> = resp.segments.iter().filter(|s| !s.implicit).map(|s| (s.tag, s.body.clone())).collect();
                let want: Vec<(Tag, String)> = tags.iter().map(|t| (*t, body_for(*t, seed).trim_end_matches('\n').to_string())).collect();
                prop_assert_eq!(explicit, want);
                let implicit = resp.segments.iter().find(|s| s.implicit).map(|s| s.body.clone());
                prop_assert_eq!(implicit, prose.as_deref().map(str::trim).filter(|p| !p.is_empty()).map(String::from));
                if tags.contains(&Tag::Code) {
                    prop_assert_eq!(resp.program(), Some(common::seeded_program(seed)));
                }
                if tags.contains(&Tag::Flowchart) {
                    prop_assert_eq!(resp.graph(), Some(ast_to_graph(&common::seeded_program(seed))));
                }
            }
            Err(r) => {
                prop_assert!(tags.is_empty() && prose.as_deref().is_none_or(|p| p.trim().is_empty()), "{:?}", r);
            }
        }
    }

    #[test]
    fn routing_is_total(tags in tag_subset()) {
        let set: BTreeSet<Tag> = tags.iter().copied().collect();
        let got = intent_of(&set).ok();
        prop_assert_eq!(got, expected_route(&set));
        if got.is_none() {
            let err = intent_of(&set).unwrap_err();
            prop_assert_eq!(err.tags, set.iter().copied().collect::<Vec<_>>());
        }
    }
}
