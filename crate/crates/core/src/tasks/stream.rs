use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Episode, TaskKind, Vocab};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const XML_MAX_DEPTH: usize = 4;
const XML_MAX_NAME: usize = 10;
const ASSIGN_MAX_VARS: usize = 4;
const ASSIGN_MAX_NAME: usize = 4;
const ARITH_MAX_DIGITS: usize = 8;

/// A self-contained piece of a stream: one top-level XML element, one
/// assignment block or one arithmetic expression. `mask[i]` marks
/// `text[i]` as predictable from what precedes it.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Unit {
    pub text: String,
    pub mask: Vec<bool>,
}

impl Unit {
    fn push(&mut self, c: char, predictable: bool) {
        self.text.push(c);
        self.mask.push(predictable);
    }

    fn push_str(&mut self, s: &str, predictable: bool) {
        for c in s.chars() {
            self.push(c, predictable);
        }
    }

    /// `^` under every predictable character.
    pub fn mask_line(&self) -> String {
        self.mask.iter().map(|&m| if m { '^' } else { ' ' }).collect()
    }
}

fn lowercase<R: Rng + ?Sized>(len: usize, rng: &mut R) -> String {
    (0..len).map(|_| char::from(b'a' + rng.random_range(0..26u8))).collect()
}

/// One top-level element from a random walk over nesting depth.
///
/// Every `<` is predictable (tags follow each other with no text between
/// them), as are the name and `>` of a closing tag.
pub fn xml_unit<R: Rng + ?Sized>(rng: &mut R) -> Unit {
    let mut u = Unit::default();
    let mut stack: Vec<String> = Vec::new();
    loop {
        let open = stack.is_empty() || (stack.len() < XML_MAX_DEPTH && rng.random_bool(0.5));
        if open {
            if stack.is_empty() && !u.text.is_empty() {
                break;
            }
            let name = lowercase(rng.random_range(1..=XML_MAX_NAME), rng);
            u.push('<', true);
            u.push_str(&name, false);
            u.push('>', false);
            stack.push(name);
        } else {
            let name = stack.pop().expect("nonempty");
            u.push('<', true);
            u.push('/', false);
            u.push_str(&name, true);
            u.push('>', true);
            if stack.is_empty() {
                break;
            }
        }
    }
    u
}

/// `s(name,value),…,q(name)value.` with 1–4 distinct names.
pub fn assign_unit<R: Rng + ?Sized>(rng: &mut R) -> Unit {
    let n = rng.random_range(1..=ASSIGN_MAX_VARS);
    let mut names: Vec<String> = Vec::with_capacity(n);
    while names.len() < n {
        let name = lowercase(rng.random_range(1..=ASSIGN_MAX_NAME), rng);
        if !names.contains(&name) {
            names.push(name);
        }
    }
    let values: Vec<String> = (0..n).map(|_| lowercase(1, rng)).collect();
    let q = rng.random_range(0..n);
    let mut u = Unit::default();
    for (name, value) in names.iter().zip(&values) {
        u.push_str(&format!("s({name},{value}),"), false);
    }
    u.push_str(&format!("q({})", names[q]), false);
    u.push_str(&values[q], true);
    u.push('.', true);
    u
}

fn operand<R: Rng + ?Sized>(rng: &mut R) -> i64 {
    let len = rng.random_range(1..=ARITH_MAX_DIGITS);
    let mut v: i64 = if len == 1 {
        rng.random_range(0..10)
    } else {
        rng.random_range(1..10)
    };
    for _ in 1..len {
        v = v * 10 + rng.random_range(0..10);
    }
    v
}

/// `[-]A±B=` followed by the reversed result and `]`.
pub fn arithmetic_unit<R: Rng + ?Sized>(rng: &mut R) -> Unit {
    let negative = rng.random_bool(0.5);
    let a = operand(rng);
    let plus = rng.random_bool(0.5);
    let b = operand(rng);
    expression(negative, a, plus, b)
}

fn expression(negative: bool, a: i64, plus: bool, b: i64) -> Unit {
    let lhs = if negative { -a } else { a };
    let result = if plus { lhs + b } else { lhs - b };
    let mut u = Unit::default();
    if negative {
        u.push('-', false);
    }
    u.push_str(&a.to_string(), false);
    u.push(if plus { '+' } else { '-' }, false);
    u.push_str(&b.to_string(), false);
    u.push('=', false);
    let reversed: String = result.to_string().chars().rev().collect();
    u.push_str(&reversed, true);
    u.push(']', true);
    u
}

/// Lengths of consecutive windows covering `total` steps.
pub fn window_lengths(total: usize, window: usize) -> Vec<usize> {
    assert!(window > 0, "window must be positive");
    let mut out = vec![window; total / window];
    if total % window != 0 {
        out.push(total % window);
    }
    out
}

/// Splits off the trailing `test_fraction` (rounded) as the test part.
pub fn split_bytes(data: &[u8], test_fraction: f64) -> Result<(&[u8], &[u8])> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!(
            "test fraction must be in [0, 1), got {test_fraction}"
        )));
    }
    let n_test = (data.len() as f64 * test_fraction).round() as usize;
    Ok(data.split_at(data.len() - n_test))
}

#[derive(Debug, Clone)]
enum Source {
    Units { task: TaskKind, rng: ChaCha8Rng },
    Bytes { data: Arc<[u8]>, pos: usize, wrap: bool },
}

/// Symbol stream with one-step-ahead targets.
///
/// `next_window` cuts the stream into consecutive windows; the last input
/// of one window is followed by the first input of the next, so windows
/// partition the stream without gaps.
#[derive(Debug, Clone)]
pub struct Stream {
    source: Source,
    vocab: Vocab,
    buf: VecDeque<(usize, bool)>,
    current: Option<usize>,
}

impl Stream {
    /// Generated stream for a synthetic online task; pure in `(seed, stream)`.
    pub fn new(task: TaskKind, seed: u64, stream: u64) -> Result<Self> {
        match task {
            TaskKind::Xml | TaskKind::Assign | TaskKind::Arith => Ok(Self {
                source: Source::Units {
                    task,
                    rng: stream_rng(seed, stream),
                },
                vocab: task.vocab(),
                buf: VecDeque::new(),
                current: None,
            }),
            _ => Err(Error::Config(format!("'{task}' is not a generated stream task"))),
        }
    }

    /// Byte stream starting at `start`; with `wrap` it cycles forever.
    pub fn from_bytes(data: Arc<[u8]>, start: usize, wrap: bool) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::Config("byte stream needs at least 2 bytes".into()));
        }
        Ok(Self {
            source: Source::Bytes {
                pos: start % data.len(),
                data,
                wrap,
            },
            vocab: Vocab::bytes(),
            buf: VecDeque::new(),
            current: None,
        })
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Next generated unit; `None` for byte streams.
    pub fn next_unit(&mut self) -> Option<Unit> {
        match &mut self.source {
            Source::Units { task, rng } => Some(match task {
                TaskKind::Xml => xml_unit(rng),
                TaskKind::Assign => assign_unit(rng),
                _ => arithmetic_unit(rng),
            }),
            Source::Bytes { .. } => None,
        }
    }

    /// Next `(symbol id, predictable)` pair.
    pub fn next_symbol(&mut self) -> Option<(usize, bool)> {
        if let Source::Bytes { data, pos, wrap } = &mut self.source {
            if *pos >= data.len() {
                if !*wrap {
                    return None;
                }
                *pos = 0;
            }
            let b = data[*pos];
            *pos += 1;
            return Some((b as usize, true));
        }
        if self.buf.is_empty() {
            let unit = self.next_unit()?;
            let ids = self.vocab.encode(&unit.text);
            self.buf.extend(ids.into_iter().zip(unit.mask));
        }
        self.buf.pop_front()
    }

    /// Up to `len` steps: inputs, next-symbol targets and masks. Shorter
    /// only at the end of a finite stream; `None` once exhausted.
    pub fn next_window(&mut self, len: usize) -> Option<Episode> {
        if self.current.is_none() {
            self.current = Some(self.next_symbol()?.0);
        }
        let mut w = Episode::default();
        for _ in 0..len {
            let Some((next, predictable)) = self.next_symbol() else {
                break;
            };
            w.inputs.push(self.current.expect("primed"));
            w.targets.push(next);
            w.mask.push(predictable);
            self.current = Some(next);
        }
        (!w.is_empty()).then_some(w)
    }
}
