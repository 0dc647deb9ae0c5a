//! Seeded task generators and loss masks.
//!
//! Episodic tasks (fixed and variable-length copy) produce independent
//! [`Episode`]s; online tasks (XML, variable assignment, arithmetic, bytes)
//! produce an unbounded [`Stream`] that is cut into windows for truncated
//! backpropagation. In both cases the target at step `t` is the symbol the
//! model must emit after reading input `t`, and only masked steps count.

mod copy;
mod stream;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use copy::{copy_episode, CopyTask, COPY_BLANKS, COPY_MAX_LEN};
pub use stream::{
    arithmetic_unit, assign_unit, split_bytes, window_lengths, xml_unit, Stream, Unit,
    XML_MAX_DEPTH,
};

use crate::error::{Error, Result};

/// Default truncated-backpropagation window for online tasks.
pub const TBPTT_WINDOW: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Copy,
    Copyvar,
    Xml,
    Assign,
    Arith,
    Bytes,
}

impl TaskKind {
    pub const ALL: [TaskKind; 6] = [
        TaskKind::Copy,
        TaskKind::Copyvar,
        TaskKind::Xml,
        TaskKind::Assign,
        TaskKind::Arith,
        TaskKind::Bytes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Copy => "copy",
            TaskKind::Copyvar => "copyvar",
            TaskKind::Xml => "xml",
            TaskKind::Assign => "assign",
            TaskKind::Arith => "arith",
            TaskKind::Bytes => "bytes",
        }
    }

    pub fn is_episodic(self) -> bool {
        matches!(self, TaskKind::Copy | TaskKind::Copyvar)
    }

    /// Symbol table of a task with default settings.
    pub fn vocab(self) -> Vocab {
        match self {
            TaskKind::Copy | TaskKind::Copyvar => CopyTask::default().vocab(),
            TaskKind::Xml => Vocab::from_chars("<>/abcdefghijklmnopqrstuvwxyz"),
            TaskKind::Assign => Vocab::from_chars("abcdefghijklmnopqrstuvwxyz(),."),
            TaskKind::Arith => Vocab::from_chars("0123456789+-=]"),
            TaskKind::Bytes => Vocab::bytes(),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task '{s}'")))
    }
}

/// Ordered symbol table; a symbol's id is its index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    symbols: Vec<char>,
}

impl Vocab {
    pub fn from_chars(s: &str) -> Self {
        Self {
            symbols: s.chars().collect(),
        }
    }

    /// All 256 byte values, shown as Latin-1 characters.
    pub fn bytes() -> Self {
        Self {
            symbols: (0..=255u8).map(char::from).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> Option<usize> {
        self.symbols.iter().position(|&s| s == c)
    }

    pub fn symbol(&self, id: usize) -> char {
        self.symbols[id]
    }

    /// Ids of every character of `s`; panics on characters outside the table.
    pub fn encode(&self, s: &str) -> Vec<usize> {
        s.chars()
            .map(|c| self.id(c).unwrap_or_else(|| panic!("'{c}' not in vocabulary")))
            .collect()
    }

    /// Text for `ids`, with control and non-ASCII bytes shown as `.`.
    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&i| {
                let c = self.symbol(i);
                if c.is_ascii_graphic() || c == ' ' {
                    c
                } else {
                    '.'
                }
            })
            .collect()
    }
}

/// One training sequence or stream window.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Episode {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
    pub mask: Vec<bool>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_masked(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Extends to `len` steps with `filler` inputs/targets and mask off.
    pub fn padded(mut self, len: usize, filler: usize) -> Self {
        if self.len() < len {
            self.inputs.resize(len, filler);
            self.targets.resize(len, filler);
            self.mask.resize(len, false);
        }
        self
    }

    /// `^` under every masked step.
    pub fn mask_line(&self) -> String {
        self.mask.iter().map(|&m| if m { '^' } else { ' ' }).collect()
    }
}
