//! Line-oriented CocoScript parser.
//!
//! Every non-blank line is either a command (`say: hello`), a block opener
//! (`if human:`, `repeat 3:`, `forever:`, `when <pattern>:`), a block
//! separator (`else:`, `otherwise:`) or the block terminator `end`.
//! Indentation is not significant. Keywords are case-insensitive; trailing
//! colons on block headers are optional.

use super::ast::{fold, Arm, Block, Command, RobotProgram, Step, DEFAULT_ARM};
use super::validate::check_structure;
use crate::diagnostic::{has_errors, Code, Diagnostic, Diagnostics};

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Cmd(Command),
    IfHuman,
    Else,
    When(String),
    Otherwise,
    Repeat(u32),
    Forever,
    End,
}

#[derive(Debug, Clone)]
struct Line {
    token: Token,
    line: usize,
    column: usize,
}

pub fn parse_program(source: &str) -> Result<RobotProgram, Diagnostics> {
    let (lines, mut diags) = tokenize(source);
    if has_errors(&diags) {
        return Err(Diagnostics(diags));
    }
    let mut parser = Parser {
        lines,
        pos: 0,
        diags: Vec::new(),
    };
    let program = parser.program();
    diags.append(&mut parser.diags);
    if has_errors(&diags) {
        return Err(Diagnostics(diags));
    }
    let program = program.expect("no errors implies a program");
    let structural: Vec<Diagnostic> = check_structure(&program)
        .into_iter()
        .filter(Diagnostic::is_error)
        .collect();
    if !structural.is_empty() {
        return Err(Diagnostics(structural));
    }
    Ok(program)
}

/// Parse a single command line such as `goto: Lab` or `humanDetection`.
pub fn parse_command(line: &str) -> Result<Command, Diagnostic> {
    match classify(line.trim()) {
        Ok(Token::Cmd(cmd)) => Ok(cmd),
        Ok(other) => Err(Diagnostic::error(
            Code::UnknownCommand,
            format!("`{}` is not a command", token_name(&other)),
        )),
        Err(d) => Err(d),
    }
}

/// Parse, then re-emit in canonical form.
pub fn canonicalize(source: &str) -> Result<String, Diagnostics> {
    parse_program(source).map(|p| super::emit::emit_program(&p))
}

fn tokenize(source: &str) -> (Vec<Line>, Vec<Diagnostic>) {
    let mut lines = Vec::new();
    let mut diags = Vec::new();
    for (idx, raw) in source.split('\n').enumerate() {
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            continue;
        }
        let line = idx + 1;
        let column = raw.chars().take_while(|c| c.is_whitespace()).count() + 1;
        match classify(trimmed) {
            Ok(token) => lines.push(Line {
                token,
                line,
                column,
            }),
            Err(d) => diags.push(d.at_line(line, column)),
        }
    }
    (lines, diags)
}

/// Strip one optional trailing colon from a block header.
fn header(s: &str) -> &str {
    s.strip_suffix(':').unwrap_or(s).trim_end()
}

fn words_eq(s: &str, expected: &str) -> bool {
    let mut a = s.split_whitespace();
    let mut b = expected.split_whitespace();
    loop {
        match (a.next(), b.next()) {
            (None, None) => return true,
            (Some(x), Some(y)) if x.eq_ignore_ascii_case(y) => {}
            _ => return false,
        }
    }
}

fn canonical_keyword(word: &str) -> Option<&'static str> {
    Command::KEYWORDS
        .iter()
        .copied()
        .find(|k| k.eq_ignore_ascii_case(word))
}

fn check_text(what: &str, text: &str) -> Result<String, Diagnostic> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Diagnostic::error(
            Code::MalformedArgument,
            format!("{what} must not be empty"),
        ));
    }
    if text.chars().any(char::is_control) {
        return Err(Diagnostic::error(
            Code::MalformedArgument,
            format!("{what} contains control characters"),
        ));
    }
    Ok(text.to_string())
}

fn classify(line: &str) -> Result<Token, Diagnostic> {
    let head = header(line);
    if words_eq(line, "end") {
        return Ok(Token::End);
    }
    if words_eq(head, "else") {
        return Ok(Token::Else);
    }
    if words_eq(head, "otherwise") {
        return Ok(Token::Otherwise);
    }
    if words_eq(head, "if human") {
        return Ok(Token::IfHuman);
    }
    if words_eq(head, "forever") {
        return Ok(Token::Forever);
    }
    let first = head.split_whitespace().next().unwrap_or("");
    if first.eq_ignore_ascii_case("repeat") {
        let rest = head[first.len()..].trim();
        return match rest.parse::<u32>() {
            Ok(n) if n > 0 => Ok(Token::Repeat(n)),
            _ => Err(Diagnostic::error(
                Code::MalformedArgument,
                format!("`repeat` needs a positive count, found `{rest}`"),
            )),
        };
    }
    if first.eq_ignore_ascii_case("when") {
        let pattern = check_text("arm pattern", &head[first.len()..])?;
        if fold(&pattern) == DEFAULT_ARM {
            return Err(Diagnostic::error(
                Code::MalformedArgument,
                "`default` is reserved and cannot be used as an arm pattern",
            ));
        }
        return Ok(Token::When(pattern));
    }

    match line.split_once(':') {
        Some((kw, payload)) => {
            let kw = kw.trim();
            let Some(keyword) = canonical_keyword(kw) else {
                return Err(Diagnostic::error(
                    Code::UnknownCommand,
                    format!("unknown command `{kw}`"),
                ));
            };
            if keyword == "humanDetection" {
                if payload.trim().is_empty() {
                    return Ok(Token::Cmd(Command::HumanDetection));
                }
                return Err(Diagnostic::error(
                    Code::MalformedArgument,
                    "`humanDetection` takes no argument",
                ));
            }
            let payload = check_text(&format!("`{keyword}` argument"), payload)?;
            Ok(Token::Cmd(
                Command::from_parts(keyword, Some(payload)).expect("keyword with payload"),
            ))
        }
        None => match canonical_keyword(first) {
            Some("humanDetection") if first.len() == line.len() => {
                Ok(Token::Cmd(Command::HumanDetection))
            }
            Some(keyword) => Err(Diagnostic::error(
                Code::MalformedArgument,
                format!("expected `{keyword}: <argument>` (missing colon)"),
            )),
            None => Err(Diagnostic::error(
                Code::UnknownCommand,
                format!("unknown command `{first}`"),
            )),
        },
    }
}

struct Parser {
    lines: Vec<Line>,
    pos: usize,
    diags: Vec<Diagnostic>,
}

impl Parser {
    fn peek(&self) -> Option<&Line> {
        self.lines.get(self.pos)
    }

    fn next(&mut self) -> Option<Line> {
        let l = self.lines.get(self.pos).cloned();
        self.pos += 1;
        l
    }

    fn program(&mut self) -> Option<RobotProgram> {
        let mut entry = None;
        if let Some(Line {
            token: Token::Cmd(Command::UserRequest(w)),
            ..
        }) = self.peek()
        {
            entry = Some(w.clone());
            self.pos += 1;
        }
        let body = self.block(&[], true)?;
        if let Some(stray) = self.next() {
            self.diags.push(
                Diagnostic::error(
                    Code::UnbalancedBlock,
                    format!("unexpected `{}` outside of any block", token_name(&stray.token)),
                )
                .at_line(stray.line, stray.column),
            );
            return None;
        }
        if body.is_empty() {
            self.diags
                .push(Diagnostic::error(Code::EmptyProgram, "program has no steps").at_line(1, 1));
            return None;
        }
        Some(RobotProgram { entry, body })
    }

    /// Parse steps until one of `stops` (left unconsumed) or end of input.
    fn block(&mut self, stops: &[fn(&Token) -> bool], top: bool) -> Option<Block> {
        let mut block = Vec::new();
        let mut forever_line: Option<(usize, usize)> = None;
        while let Some(line) = self.peek().cloned() {
            if stops.iter().any(|s| s(&line.token)) {
                break;
            }
            if let Some((l, c)) = forever_line {
                self.diags.push(
                    Diagnostic::error(
                        Code::ForeverNotLast,
                        "`forever` must be the last step of the program",
                    )
                    .at_line(l, c),
                );
                return None;
            }
            self.pos += 1;
            let step = match line.token.clone() {
                Token::Cmd(Command::UserRequest(_)) => {
                    let earlier = self.lines[..self.pos - 1]
                        .iter()
                        .any(|l| matches!(l.token, Token::Cmd(Command::UserRequest(_))));
                    let code = if (top && block.is_empty()) || earlier {
                        Code::MultipleEntryTriggers
                    } else {
                        Code::MisplacedEntryTrigger
                    };
                    self.diags.push(
                        Diagnostic::error(
                            code,
                            "`userRequest` may appear only once, as the first line",
                        )
                        .at_line(line.line, line.column),
                    );
                    return None;
                }
                Token::Cmd(Command::Ask(question)) => {
                    // A `when` right after `ask:` opens its branch unless it is
                    // indented less, in which case it is the next arm of an
                    // enclosing branch and this ask is a plain question.
                    let opens = matches!(
                        self.peek(),
                        Some(Line { token: Token::When(_), column, .. }) if *column >= line.column
                    );
                    if opens {
                        self.ask_branch(question, &line)?
                    } else {
                        Step::Do(Command::Ask(question))
                    }
                }
                Token::Cmd(cmd) => Step::Do(cmd),
                Token::IfHuman => {
                    let then = self.block(&[is_else, is_end], false)?;
                    let otherwise = match self.peek().map(|l| &l.token) {
                        Some(Token::Else) => {
                            self.pos += 1;
                            self.block(&[is_end], false)?
                        }
                        _ => Vec::new(),
                    };
                    self.expect_end(&line)?;
                    Step::IfHuman { then, otherwise }
                }
                Token::Repeat(count) => {
                    let body = self.loop_body(&line)?;
                    Step::Repeat { count, body }
                }
                Token::Forever => {
                    if !top {
                        self.diags.push(
                            Diagnostic::error(
                                Code::ForeverNotLast,
                                "`forever` is only allowed as the last top-level step",
                            )
                            .at_line(line.line, line.column),
                        );
                        return None;
                    }
                    let body = self.loop_body(&line)?;
                    forever_line = Some((line.line, line.column));
                    Step::Forever { body }
                }
                Token::Else | Token::Otherwise | Token::When(_) | Token::End => {
                    self.diags.push(
                        Diagnostic::error(
                            Code::UnbalancedBlock,
                            format!("unexpected `{}`", token_name(&line.token)),
                        )
                        .at_line(line.line, line.column),
                    );
                    return None;
                }
            };
            block.push(step);
        }
        Some(block)
    }

    fn loop_body(&mut self, opener: &Line) -> Option<Block> {
        let body = self.block(&[is_end], false)?;
        self.expect_end(opener)?;
        if body.is_empty() {
            self.diags.push(
                Diagnostic::error(Code::EmptyBlock, "loop body must not be empty")
                    .at_line(opener.line, opener.column),
            );
            return None;
        }
        Some(body)
    }

    fn ask_branch(&mut self, question: String, opener: &Line) -> Option<Step> {
        let mut arms: Vec<Arm> = Vec::new();
        let mut default = Vec::new();
        loop {
            let Some(line) = self.next() else {
                return self.unbalanced(opener);
            };
            match line.token {
                Token::When(pattern) => {
                    if arms.iter().any(|a| fold(&a.pattern) == fold(&pattern)) {
                        self.diags.push(
                            Diagnostic::error(
                                Code::DuplicateArm,
                                format!("duplicate arm pattern `{pattern}`"),
                            )
                            .at_line(line.line, line.column),
                        );
                        return None;
                    }
                    let body = self.block(&[is_when, is_otherwise, is_end], false)?;
                    arms.push(Arm { pattern, body });
                }
                Token::Otherwise => {
                    default = self.block(&[is_end], false)?;
                    self.expect_end(opener)?;
                    break;
                }
                Token::End => break,
                _ => unreachable!("block() stops only at when/otherwise/end"),
            }
        }
        Some(Step::AskBranch {
            question,
            arms,
            default,
        })
    }

    fn expect_end(&mut self, opener: &Line) -> Option<()> {
        match self.next() {
            Some(Line {
                token: Token::End, ..
            }) => Some(()),
            _ => self.unbalanced(opener),
        }
    }

    fn unbalanced<T>(&mut self, opener: &Line) -> Option<T> {
        self.diags.push(
            Diagnostic::error(
                Code::UnbalancedBlock,
                format!("`{}` block is missing its `end`", token_name(&opener.token)),
            )
            .at_line(opener.line, opener.column),
        );
        None
    }
}

fn is_end(t: &Token) -> bool {
    matches!(t, Token::End)
}
fn is_else(t: &Token) -> bool {
    matches!(t, Token::Else)
}
fn is_when(t: &Token) -> bool {
    matches!(t, Token::When(_))
}
fn is_otherwise(t: &Token) -> bool {
    matches!(t, Token::Otherwise)
}

fn token_name(t: &Token) -> String {
    match t {
        Token::Cmd(c) => c.keyword().to_string(),
        Token::IfHuman => "if human".into(),
        Token::Else => "else".into(),
        Token::When(p) => format!("when {p}"),
        Token::Otherwise => "otherwise".into(),
        Token::Repeat(n) => format!("repeat {n}"),
        Token::Forever => "forever".into(),
        Token::End => "end".into(),
    }
}
