//! Independent oracles for the generated tasks. They see only text and
//! mask, never the generator internals.

#![allow(dead_code)]

use std::collections::HashMap;

pub const XML_MAX_DEPTH: usize = 4;

#[derive(Debug, Default)]
enum XmlState {
    #[default]
    BetweenTags,
    AfterLt,
    OpenName(String),
    CloseName(String),
}

/// Stack machine over a symbol stream. Every masked character must be
/// forced by the history, and every forced character must be masked.
#[derive(Debug, Default)]
pub struct XmlValidator {
    stack: Vec<String>,
    state: XmlState,
    pub symbols: usize,
    pub max_depth: usize,
}

impl XmlValidator {
    pub fn feed(&mut self, c: char, masked: bool) -> Result<(), String> {
        let at = self.symbols;
        self.symbols += 1;
        let fail = |what: &str| Err(format!("symbol {at} '{c}' (masked={masked}): {what}"));
        match std::mem::take(&mut self.state) {
            XmlState::BetweenTags => {
                if c != '<' || !masked {
                    return fail("expected a masked '<'");
                }
                self.state = XmlState::AfterLt;
            }
            XmlState::AfterLt if c == '/' => {
                if masked {
                    return fail("'/' is not forced");
                }
                if self.stack.is_empty() {
                    return fail("closing tag with no open element");
                }
                self.state = XmlState::CloseName(String::new());
            }
            XmlState::AfterLt => {
                if !c.is_ascii_lowercase() || masked {
                    return fail("tag names start with an unmasked lowercase letter");
                }
                self.state = XmlState::OpenName(c.to_string());
            }
            XmlState::OpenName(mut name) => {
                if masked {
                    return fail("opening tags are not forced");
                }
                if c == '>' {
                    self.stack.push(name);
                    self.max_depth = self.max_depth.max(self.stack.len());
                    if self.stack.len() > XML_MAX_DEPTH {
                        return fail("nesting deeper than allowed");
                    }
                    self.state = XmlState::BetweenTags;
                } else if c.is_ascii_lowercase() {
                    name.push(c);
                    if name.len() > 10 {
                        return fail("tag name longer than 10");
                    }
                    self.state = XmlState::OpenName(name);
                } else {
                    return fail("bad tag name character");
                }
            }
            XmlState::CloseName(mut name) => {
                if !masked {
                    return fail("closing-tag characters are forced");
                }
                let top = self.stack.last().expect("checked on '/'");
                if name == *top {
                    if c != '>' {
                        return fail("expected '>'");
                    }
                    self.stack.pop();
                    self.state = XmlState::BetweenTags;
                } else {
                    if top[name.len()..].chars().next() != Some(c) {
                        return fail("closing tag does not match the open element");
                    }
                    name.push(c);
                    self.state = XmlState::CloseName(name);
                }
            }
        }
        Ok(())
    }
}

fn expect_mask(mask: &[bool], expected: &[bool], text: &str) -> Result<(), String> {
    if mask != expected {
        return Err(format!("mask mismatch for {text:?}"));
    }
    Ok(())
}

/// Replays `s(name,value),…,q(name)value.` with a dictionary.
pub fn check_assign(text: &str, mask: &[bool]) -> Result<(), String> {
    let err = |m: &str| Err(format!("{text:?}: {m}"));
    if text.chars().count() != mask.len() {
        return err("text and mask lengths differ");
    }
    let body = match text.strip_suffix('.') {
        Some(b) => b,
        None => return err("missing '.'"),
    };
    let parts: Vec<&str> = body.split(',').collect();
    let (sets, query) = parts.split_at(parts.len() - 1);
    if sets.is_empty() || sets.len() % 2 != 0 {
        return err("assignments come as name,value pairs");
    }
    let mut dict = HashMap::new();
    for pair in sets.chunks(2) {
        let name = match pair[0].strip_prefix("s(") {
            Some(n) => n,
            None => return err("assignment must start with 's('"),
        };
        let value = match pair[1].strip_suffix(')') {
            Some(v) => v,
            None => return err("assignment must end with ')'"),
        };
        if name.is_empty() || name.len() > 4 || !name.chars().all(|c| c.is_ascii_lowercase()) {
            return err("bad variable name");
        }
        if value.len() != 1 || !value.chars().all(|c| c.is_ascii_lowercase()) {
            return err("values are single lowercase letters");
        }
        if dict.insert(name.to_string(), value.to_string()).is_some() {
            return err("duplicate variable in one block");
        }
    }
    if dict.len() > 4 {
        return err("more than 4 assignments");
    }
    let q = match query[0].strip_prefix("q(") {
        Some(q) => q,
        None => return err("query must start with 'q('"),
    };
    let (name, answer) = match q.split_once(')') {
        Some(x) => x,
        None => return err("unterminated query"),
    };
    match dict.get(name) {
        Some(v) if v == answer => {}
        Some(_) => return err("answer disagrees with the assignment"),
        None => return err("queried name was never assigned"),
    }
    let n = mask.len();
    let expected: Vec<bool> = (0..n).map(|i| i >= n - 2).collect();
    expect_mask(mask, &expected, text)
}

fn digits(s: &str) -> Result<i128, String> {
    if s.is_empty() || s.len() > 8 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(format!("operand {s:?} is not 1-8 digits"));
    }
    if s.len() > 1 && s.starts_with('0') {
        return Err(format!("operand {s:?} has a leading zero"));
    }
    Ok(s.parse().expect("validated digits"))
}

/// Parses `[-]A±B=` and checks the reversed result against exact
/// integer arithmetic. Returns the result.
pub fn check_arith(text: &str, mask: &[bool]) -> Result<i128, String> {
    let err = |m: String| Err(format!("{text:?}: {m}"));
    if !text.is_ascii() || text.len() != mask.len() {
        return err("expected ASCII text with one mask entry per character".into());
    }
    let (expr, answer) = match text.split_once('=') {
        Some(x) => x,
        None => return err("missing '='".into()),
    };
    let (neg, rest) = match expr.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, expr),
    };
    let op_at = match rest.find(['+', '-']) {
        Some(i) => i,
        None => return err("missing operator".into()),
    };
    let a = digits(&rest[..op_at]).or_else(|e| err(e))?;
    let b = digits(&rest[op_at + 1..]).or_else(|e| err(e))?;
    let lhs = if neg { -a } else { a };
    let value = if rest.as_bytes()[op_at] == b'+' { lhs + b } else { lhs - b };
    let expected: String = value.to_string().chars().rev().collect::<String>() + "]";
    if answer != expected {
        return err(format!("answer {answer:?}, exact arithmetic gives {expected:?}"));
    }
    let masked_from = expr.len() + 1;
    let want: Vec<bool> = (0..text.len()).map(|i| i >= masked_from).collect();
    expect_mask(mask, &want, text)?;
    Ok(value)
}

/// Splits a `dump` listing of stream units into `(text, mask)` pairs.
pub fn dump_units(listing: &str) -> Vec<(String, Vec<bool>)> {
    let lines: Vec<&str> = listing.lines().collect();
    lines
        .chunks(2)
        .map(|pair| {
            let text = pair[0].to_string();
            let marks: Vec<char> = pair.get(1).copied().unwrap_or("").chars().collect();
            let mask = (0..text.chars().count()).map(|i| marks.get(i) == Some(&'^')).collect();
            (text, mask)
        })
        .collect()
}
