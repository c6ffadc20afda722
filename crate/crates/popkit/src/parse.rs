//! Protocol file format.
//!
//! Line-oriented UTF-8, `#` starts a comment. Directives:
//!
//! ```text
//! states: s1 s2 ...                 (exactly once)
//! init: s1 = <expr>; s2 = rest      (exactly once)
//! leader: s1 [s2 ...]               (exactly once)
//! transition: a b -> c d            (repeatable)
//! q: a b -> c d                     (optional, repeatable)
//! ```
//!
//! Init expressions: integer | `n` | `floor(n^(a/b))` | expr `+` expr |
//! expr `-` expr, plus a lone `rest` balance term for at most one state.
//! Omitting `q:` lines derives Q as the transitions that change the
//! leader-set sum.

use thiserror::Error;

use crate::model::{InitExpr, Protocol, StateId, Transition};

#[derive(Debug, Error)]
#[error("line {line}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub msg: String,
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError { line, msg: msg.into() })
}

pub fn parse_protocol(text: &str) -> Result<Protocol, ParseError> {
    let mut states: Option<(usize, Vec<String>)> = None;
    let mut init_line: Option<(usize, String)> = None;
    let mut leader_line: Option<(usize, String)> = None;
    let mut transition_lines: Vec<(usize, String)> = Vec::new();
    let mut q_lines: Vec<(usize, String)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = match line.split_once(':') {
            Some((k, r)) => (k.trim(), r.trim().to_string()),
            None => return err(lineno, format!("expected `key: ...`, got `{line}`")),
        };
        match key {
            "states" => {
                if states.is_some() {
                    return err(lineno, "duplicate `states:` line");
                }
                let names: Vec<String> = rest.split_whitespace().map(String::from).collect();
                if names.is_empty() {
                    return err(lineno, "`states:` must list at least one state");
                }
                for (i, a) in names.iter().enumerate() {
                    if names[..i].contains(a) {
                        return err(lineno, format!("duplicate state name `{a}`"));
                    }
                }
                states = Some((lineno, names));
            }
            "init" => {
                if init_line.is_some() {
                    return err(lineno, "duplicate `init:` line");
                }
                init_line = Some((lineno, rest));
            }
            "leader" => {
                if leader_line.is_some() {
                    return err(lineno, "duplicate `leader:` line");
                }
                leader_line = Some((lineno, rest));
            }
            "transition" => transition_lines.push((lineno, rest)),
            "q" => q_lines.push((lineno, rest)),
            other => return err(lineno, format!("unknown directive `{other}`")),
        }
    }

    let (_, state_names) = match states {
        Some(s) => s,
        None => return err(0, "missing `states:` line"),
    };
    let lookup = |line: usize, name: &str| -> Result<StateId, ParseError> {
        state_names
            .iter()
            .position(|s| s == name)
            .ok_or(ParseError { line, msg: format!("unknown state name `{name}`") })
    };

    // transitions
    let mut transitions: Vec<Transition> = Vec::new();
    for (lineno, body) in &transition_lines {
        let t = parse_rule(*lineno, body, &lookup)?;
        if t.is_null() {
            continue; // null transitions are implicit, never stored
        }
        if let Some(prev) = transitions.iter().find(|p| (p.r1, p.r2) == (t.r1, t.r2)) {
            if (prev.p1, prev.p2) != (t.p1, t.p2) {
                return err(
                    *lineno,
                    format!(
                        "conflicting transition for pair {} {}: `{} {}` vs `{} {}`",
                        state_names[t.r1],
                        state_names[t.r2],
                        state_names[prev.p1],
                        state_names[prev.p2],
                        state_names[t.p1],
                        state_names[t.p2]
                    ),
                );
            }
            continue; // exact duplicate
        }
        transitions.push(t);
    }

    // leader set
    let (leader_lineno, leader_body) = match leader_line {
        Some(l) => l,
        None => return err(0, "missing `leader:` line"),
    };
    let mut leader_set = Vec::new();
    for name in leader_body.split_whitespace() {
        let s = lookup(leader_lineno, name)?;
        if !leader_set.contains(&s) {
            leader_set.push(s);
        }
    }
    if leader_set.is_empty() {
        return err(leader_lineno, "`leader:` must name at least one state");
    }

    // init
    let (init_lineno, init_body) = match init_line {
        Some(l) => l,
        None => return err(0, "missing `init:` line"),
    };
    let mut init: Vec<(StateId, InitExpr)> = Vec::new();
    let mut saw_rest = false;
    for assign in init_body.split(';') {
        let assign = assign.trim();
        if assign.is_empty() {
            continue;
        }
        let (name, expr_src) = match assign.split_once('=') {
            Some((a, b)) => (a.trim(), b.trim()),
            None => return err(init_lineno, format!("init assignment `{assign}` missing `=`")),
        };
        let s = lookup(init_lineno, name)?;
        if init.iter().any(|(prev, _)| *prev == s) {
            return err(init_lineno, format!("duplicate init assignment for `{name}`"));
        }
        let expr = parse_init_expr(init_lineno, expr_src)?;
        if expr.contains_rest() {
            if expr != InitExpr::Rest {
                return err(init_lineno, "`rest` must stand alone as a state's whole expression");
            }
            if saw_rest {
                return err(init_lineno, "at most one state may use `rest`");
            }
            saw_rest = true;
        }
        init.push((s, expr));
    }
    if init.is_empty() {
        return err(init_lineno, "`init:` must contain at least one assignment");
    }

    // q set
    let q_set = if q_lines.is_empty() {
        None
    } else {
        let mut q = Vec::new();
        for (lineno, body) in &q_lines {
            let t = parse_rule(*lineno, body, &lookup)?;
            match transitions.iter().find(|p| **p == t) {
                Some(found) => {
                    if !q.contains(found) {
                        q.push(*found);
                    }
                }
                None => {
                    return err(
                        *lineno,
                        format!("`q:` rule `{body}` is not a declared non-null transition"),
                    )
                }
            }
        }
        Some(q)
    };

    Ok(Protocol::assemble(state_names, transitions, init, leader_set, q_set))
}

fn parse_rule(
    line: usize,
    body: &str,
    lookup: &impl Fn(usize, &str) -> Result<StateId, ParseError>,
) -> Result<Transition, ParseError> {
    let toks: Vec<&str> = body.split_whitespace().collect();
    if toks.len() != 5 || toks[2] != "->" {
        return err(line, format!("expected `a b -> c d`, got `{body}`"));
    }
    Ok(Transition::new(
        lookup(line, toks[0])?,
        lookup(line, toks[1])?,
        lookup(line, toks[3])?,
        lookup(line, toks[4])?,
    ))
}

// --- init expression parsing ---

#[derive(Debug, PartialEq)]
enum Tok {
    Int(u64),
    N,
    Rest,
    Floor,
    Plus,
    Minus,
    Caret,
    Slash,
    LParen,
    RParen,
}

fn tokenize(line: usize, src: &str) -> Result<Vec<Tok>, ParseError> {
    let mut toks = Vec::new();
    let mut chars = src.chars().peekable();
    while let Some(&ch) = chars.peek() {
        match ch {
            c if c.is_whitespace() => {
                chars.next();
            }
            '+' => {
                chars.next();
                toks.push(Tok::Plus);
            }
            '-' => {
                chars.next();
                toks.push(Tok::Minus);
            }
            '^' => {
                chars.next();
                toks.push(Tok::Caret);
            }
            '/' => {
                chars.next();
                toks.push(Tok::Slash);
            }
            '(' => {
                chars.next();
                toks.push(Tok::LParen);
            }
            ')' => {
                chars.next();
                toks.push(Tok::RParen);
            }
            c if c.is_ascii_digit() => {
                let mut v: u64 = 0;
                while let Some(&d) = chars.peek() {
                    if let Some(digit) = d.to_digit(10) {
                        v = v * 10 + digit as u64;
                        chars.next();
                    } else {
                        break;
                    }
                }
                toks.push(Tok::Int(v));
            }
            c if c.is_alphabetic() => {
                let mut word = String::new();
                while let Some(&d) = chars.peek() {
                    if d.is_alphanumeric() || d == '_' {
                        word.push(d);
                        chars.next();
                    } else {
                        break;
                    }
                }
                match word.as_str() {
                    "n" => toks.push(Tok::N),
                    "rest" => toks.push(Tok::Rest),
                    "floor" => toks.push(Tok::Floor),
                    other => return err(line, format!("unexpected word `{other}` in init expression")),
                }
            }
            other => return err(line, format!("unexpected character `{other}` in init expression")),
        }
    }
    Ok(toks)
}

fn parse_init_expr(line: usize, src: &str) -> Result<InitExpr, ParseError> {
    let toks = tokenize(line, src)?;
    let mut pos = 0;
    let expr = parse_sum(line, &toks, &mut pos)?;
    if pos != toks.len() {
        return err(line, format!("trailing tokens in init expression `{src}`"));
    }
    Ok(expr)
}

fn parse_sum(line: usize, toks: &[Tok], pos: &mut usize) -> Result<InitExpr, ParseError> {
    let mut acc = parse_atom(line, toks, pos)?;
    loop {
        match toks.get(*pos) {
            Some(Tok::Plus) => {
                *pos += 1;
                let rhs = parse_atom(line, toks, pos)?;
                acc = InitExpr::Add(Box::new(acc), Box::new(rhs));
            }
            Some(Tok::Minus) => {
                *pos += 1;
                let rhs = parse_atom(line, toks, pos)?;
                acc = InitExpr::Sub(Box::new(acc), Box::new(rhs));
            }
            _ => return Ok(acc),
        }
    }
}

fn expect(line: usize, toks: &[Tok], pos: &mut usize, want: Tok) -> Result<(), ParseError> {
    if toks.get(*pos) == Some(&want) {
        *pos += 1;
        Ok(())
    } else {
        err(line, format!("expected {want:?} in init expression"))
    }
}

fn parse_atom(line: usize, toks: &[Tok], pos: &mut usize) -> Result<InitExpr, ParseError> {
    match toks.get(*pos) {
        Some(Tok::Int(v)) => {
            *pos += 1;
            Ok(InitExpr::Lit(*v))
        }
        Some(Tok::N) => {
            *pos += 1;
            Ok(InitExpr::N)
        }
        Some(Tok::Rest) => {
            *pos += 1;
            Ok(InitExpr::Rest)
        }
        Some(Tok::Floor) => {
            *pos += 1;
            // floor(n^(a/b))
            expect(line, toks, pos, Tok::LParen)?;
            expect(line, toks, pos, Tok::N)?;
            expect(line, toks, pos, Tok::Caret)?;
            expect(line, toks, pos, Tok::LParen)?;
            let a = match toks.get(*pos) {
                Some(Tok::Int(v)) => {
                    *pos += 1;
                    *v as u32
                }
                _ => return err(line, "expected integer numerator in floor(n^(a/b))"),
            };
            expect(line, toks, pos, Tok::Slash)?;
            let b = match toks.get(*pos) {
                Some(Tok::Int(v)) if *v > 0 => {
                    *pos += 1;
                    *v as u32
                }
                _ => return err(line, "expected positive integer denominator in floor(n^(a/b))"),
            };
            expect(line, toks, pos, Tok::RParen)?;
            expect(line, toks, pos, Tok::RParen)?;
            Ok(InitExpr::FloorPow(a, b))
        }
        _ => err(line, "expected integer, `n`, `rest`, or `floor(...)`"),
    }
}
