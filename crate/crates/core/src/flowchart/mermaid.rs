//! The Mermaid subset used to exchange flowcharts with the language model.
//!
//! ```text
//! flowchart TD
//!     S(["Start"]) --> n1
//!     n1["say: hi"] --> E2
//!     E2(["End"])
//! ```
//!
//! Shapes: `([..])` Start/End, `[..]` action, `{..}` decision, `{{..}}` loop.
//! Edges: `-->`, `-- label -->` or `-->|label|`, chains allowed. Labels may be
//! double-quoted with `\"`, `\\`, `\n` and `\t` escapes.

use std::collections::HashMap;
use std::fmt::Write;

use super::graph::{valid_id, FlowEdge, FlowGraph, FlowNode, Shape};
use crate::diagnostic::{has_errors, Code, Diagnostic, Diagnostics};

const HEADER: &str = "flowchart TD";
const INDENT: &str = "    ";

/// Render a flowchart in canonical form: nodes in graph order, one line per
/// outgoing edge with the node declared on its first line, and a bare
/// declaration for nodes without outgoing edges. Pending behavior notes are
/// not part of the text form.
pub fn emit_mermaid(graph: &FlowGraph) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{HEADER}");
    for node in graph.nodes() {
        let decl = declaration(node);
        let mut first = true;
        for e in graph.out_edges(&node.id) {
            let head = if first { decl.as_str() } else { node.id.as_str() };
            first = false;
            match &e.label {
                None => {
                    let _ = writeln!(out, "{INDENT}{head} --> {}", e.to);
                }
                Some(l) => {
                    let _ = writeln!(out, "{INDENT}{head} -- {} --> {}", edge_label(l), e.to);
                }
            }
        }
        if first {
            let _ = writeln!(out, "{INDENT}{decl}");
        }
    }
    out
}

fn declaration(node: &FlowNode) -> String {
    let (open, close) = delimiters(node.kind.shape());
    format!("{}{open}{}{close}", node.id, quote(&node.label))
}

fn delimiters(shape: Shape) -> (&'static str, &'static str) {
    match shape {
        Shape::Stadium => ("([", "])"),
        Shape::Rect => ("[", "]"),
        Shape::Diamond => ("{", "}"),
        Shape::Hexagon => ("{{", "}}"),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn edge_label(l: &str) -> String {
    let plain = !l.is_empty()
        && l.trim() == l
        && !l
            .chars()
            .any(|c| c.is_control() || "\"\\-><|[]{}()%;".contains(c));
    if plain {
        l.to_string()
    } else {
        quote(l)
    }
}

/// Parse Mermaid text and check the resulting flowchart. Warnings (ignored
/// styling, other directions) are dropped; use
/// [`parse_mermaid_with_warnings`] to see them.
pub fn parse_mermaid(text: &str) -> Result<FlowGraph, Diagnostics> {
    parse_mermaid_with_warnings(text).map(|(g, _)| g)
}

pub fn parse_mermaid_with_warnings(text: &str) -> Result<(FlowGraph, Vec<Diagnostic>), Diagnostics> {
    let mut p = Parser::default();
    let mut header_seen = false;
    for (idx, raw) in text.split('\n').enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw).trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with("%%{") {
            p.diags.push(
                Diagnostic::warning(Code::UnsupportedFeature, "directives are ignored")
                    .at_line(line_no, 1),
            );
            continue;
        }
        if line.starts_with("%%") {
            continue;
        }
        if !header_seen {
            header_seen = true;
            p.header(line, line_no);
            continue;
        }
        p.statement(line, line_no);
    }
    if !header_seen {
        p.diags.push(Diagnostic::error(
            Code::MermaidSyntax,
            "missing `flowchart TD` header",
        ));
    }
    p.finish()
}

#[derive(Default)]
struct Parser {
    nodes: Vec<FlowNode>,
    declared: HashMap<String, (Shape, String)>,
    referenced: Vec<(String, usize)>,
    edges: Vec<FlowEdge>,
    diags: Vec<Diagnostic>,
}

impl Parser {
    fn header(&mut self, line: &str, line_no: usize) {
        let words: Vec<&str> = line.trim_end_matches(';').split_whitespace().collect();
        match words.as_slice() {
            [kw, dir] if matches!(*kw, "flowchart" | "graph") => {
                if !matches!(*dir, "TD" | "TB") {
                    self.diags.push(
                        Diagnostic::warning(
                            Code::UnsupportedFeature,
                            format!("direction `{dir}` is ignored; flowcharts are drawn top-down"),
                        )
                        .at_line(line_no, kw.len() + 2),
                    );
                }
            }
            [kw] if matches!(*kw, "flowchart" | "graph") => {}
            _ => self.diags.push(
                Diagnostic::error(
                    Code::MermaidSyntax,
                    format!("expected `flowchart TD` header, found `{line}`"),
                )
                .at_line(line_no, 1),
            ),
        }
    }

    fn statement(&mut self, line: &str, line_no: usize) {
        let first = line.split_whitespace().next().unwrap_or("");
        match first {
            "style" | "classDef" | "class" | "linkStyle" | "direction" => {
                self.diags.push(
                    Diagnostic::warning(
                        Code::UnsupportedFeature,
                        format!("`{first}` statements are ignored"),
                    )
                    .at_line(line_no, 1),
                );
                return;
            }
            "subgraph" | "end" | "click" => {
                self.diags.push(
                    Diagnostic::error(
                        Code::UnsupportedFeature,
                        format!("`{first}` is not supported"),
                    )
                    .at_line(line_no, 1),
                );
                return;
            }
            _ => {}
        }
        let mut cur = Cursor {
            src: line,
            pos: 0,
            line: line_no,
        };
        if let Err(d) = self.chain(&mut cur) {
            self.diags.push(d);
        }
    }

    fn chain(&mut self, cur: &mut Cursor) -> Result<(), Diagnostic> {
        let mut from = self.node_ref(cur)?;
        loop {
            cur.skip_ws();
            if cur.eat(";") {
                cur.skip_ws();
            }
            if cur.done() {
                return Ok(());
            }
            if cur.peek() == Some('&') {
                return Err(cur.error(Code::UnsupportedFeature, "`&` node groups are not supported"));
            }
            let label = self.link(cur)?;
            cur.skip_ws();
            let to = self.node_ref(cur)?;
            self.edges.push(FlowEdge {
                from: from.clone(),
                to: to.clone(),
                label,
            });
            from = to;
        }
    }

    fn link(&mut self, cur: &mut Cursor) -> Result<Option<String>, Diagnostic> {
        for unsupported in ["-.->", "-.-", "==>", "===", "---", "--o", "--x", "<--"] {
            if cur.rest().starts_with(unsupported) {
                return Err(cur.error(
                    Code::UnsupportedFeature,
                    format!("link style `{unsupported}` is not supported; use `-->`"),
                ));
            }
        }
        if cur.eat("-->") {
            cur.skip_ws();
            if cur.eat("|") {
                let label = if cur.peek() == Some('"') {
                    cur.quoted()?
                } else {
                    cur.until("|")?.trim().to_string()
                };
                cur.skip_ws();
                if !cur.eat("|") {
                    return Err(cur.error(Code::MermaidSyntax, "expected closing `|`"));
                }
                return Ok(Some(label));
            }
            return Ok(None);
        }
        if cur.eat("--") {
            cur.skip_ws();
            let label = if cur.peek() == Some('"') {
                let l = cur.quoted()?;
                cur.skip_ws();
                l
            } else {
                cur.until("-->")?.trim().to_string()
            };
            if !cur.eat("-->") {
                return Err(cur.error(Code::MermaidSyntax, "expected `-->` after edge label"));
            }
            return Ok(Some(label));
        }
        Err(cur.error(Code::MermaidSyntax, "expected `-->`"))
    }

    fn node_ref(&mut self, cur: &mut Cursor) -> Result<String, Diagnostic> {
        let col = cur.pos + 1;
        let id = cur.take_while(|c| c.is_ascii_alphanumeric() || c == '_');
        if id.is_empty() {
            return Err(cur.error(Code::MermaidSyntax, "expected a node id"));
        }
        if !valid_id(&id) {
            return Err(Diagnostic::error(
                Code::InvalidNodeId,
                format!("node id `{id}` must start with a letter"),
            )
            .at_line(cur.line, col)
            .with_nodes([id.as_str()]));
        }
        let shape = if cur.eat("([") {
            Some((Shape::Stadium, "])"))
        } else if cur.eat("{{") {
            Some((Shape::Hexagon, "}}"))
        } else if cur.eat("{") {
            Some((Shape::Diamond, "}"))
        } else if cur.eat("[") {
            Some((Shape::Rect, "]"))
        } else if matches!(cur.peek(), Some('(' | '>')) {
            return Err(cur.error(Code::UnsupportedFeature, "node shape is not supported"));
        } else {
            None
        };
        match shape {
            None => self.referenced.push((id.clone(), cur.line)),
            Some((shape, close)) => {
                let label = if cur.peek() == Some('"') {
                    cur.quoted()?
                } else {
                    cur.until(close)?.trim().to_string()
                };
                if !cur.eat(close) {
                    return Err(cur.error(Code::MermaidSyntax, format!("expected `{close}`")));
                }
                self.declare(&id, shape, label, cur.line, col)?;
            }
        }
        Ok(id)
    }

    fn declare(
        &mut self,
        id: &str,
        shape: Shape,
        label: String,
        line: usize,
        col: usize,
    ) -> Result<(), Diagnostic> {
        if let Some(prev) = self.declared.get(id) {
            if *prev == (shape, label) {
                return Ok(());
            }
            return Err(Diagnostic::error(
                Code::DuplicateNodeId,
                format!("node `{id}` is declared twice with different shapes or labels"),
            )
            .at_line(line, col)
            .with_nodes([id]));
        }
        let node = FlowNode::from_shape(id, shape, &label).map_err(|d| d.at_line(line, col))?;
        self.declared.insert(id.to_string(), (shape, label));
        self.nodes.push(node);
        Ok(())
    }

    fn finish(mut self) -> Result<(FlowGraph, Vec<Diagnostic>), Diagnostics> {
        for (id, line) in std::mem::take(&mut self.referenced) {
            if !self.declared.contains_key(&id) {
                self.declared
                    .insert(id.clone(), (Shape::Rect, String::new()));
                self.diags.push(
                    Diagnostic::error(
                        Code::MermaidSyntax,
                        format!("node `{id}` is used but never given a shape and label"),
                    )
                    .at_line(line, 1)
                    .with_nodes([id.as_str()]),
                );
            }
        }
        if has_errors(&self.diags) {
            return Err(Diagnostics(self.diags));
        }
        let graph = FlowGraph::new(self.nodes, self.edges);
        self.diags.extend(graph.check());
        if has_errors(&self.diags) {
            return Err(Diagnostics(self.diags));
        }
        Ok((graph, self.diags))
    }
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn done(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn eat(&mut self, s: &str) -> bool {
        if self.rest().starts_with(s) {
            self.pos += s.len();
            true
        } else {
            false
        }
    }

    fn skip_ws(&mut self) {
        let n = self.rest().len() - self.rest().trim_start().len();
        self.pos += n;
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let rest = self.rest();
        let end = rest.find(|c: char| !f(c)).unwrap_or(rest.len());
        self.pos += end;
        rest[..end].to_string()
    }

    fn until(&mut self, delim: &str) -> Result<&'a str, Diagnostic> {
        match self.rest().find(delim) {
            Some(i) => {
                let s = &self.rest()[..i];
                self.pos += i;
                Ok(s)
            }
            None => Err(self.error(Code::MermaidSyntax, format!("expected `{delim}`"))),
        }
    }

    fn quoted(&mut self) -> Result<String, Diagnostic> {
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.rest().char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '"' => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                '\\' => match chars.next() {
                    Some((_, '"')) => out.push('"'),
                    Some((_, '\\')) => out.push('\\'),
                    Some((_, 'n')) => out.push('\n'),
                    Some((_, 't')) => out.push('\t'),
                    Some((_, other)) => {
                        self.pos += i;
                        return Err(self.error(
                            Code::MermaidSyntax,
                            format!("unknown escape `\\{other}`"),
                        ));
                    }
                    None => break,
                },
                c => out.push(c),
            }
        }
        self.pos = start;
        Err(self.error(Code::MermaidSyntax, "unterminated quoted label"))
    }

    fn error(&self, code: Code, msg: impl Into<String>) -> Diagnostic {
        Diagnostic::error(code, msg).at_line(self.line, self.pos + 1)
    }
}
