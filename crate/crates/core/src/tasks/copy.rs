use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Episode, Vocab};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const COPY_MAX_LEN: usize = 10;
pub const COPY_BLANKS: usize = 100;

const DATA_CHARS: &str = "abcdefghijklmnopqrstuvwxyz";
const BLANK: char = '-';
const DELIMITER: char = ':';

/// Copy task: `k` data symbols, a run of blanks, a delimiter, then `k`
/// blank steps during which the data must be reproduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyTask {
    /// Number of data symbols; blank and delimiter come on top.
    pub alphabet: usize,
    pub max_len: usize,
    pub blanks: usize,
    /// Draw `k` uniformly from `1..=max_len` instead of using `max_len`.
    pub variable: bool,
}

impl Default for CopyTask {
    fn default() -> Self {
        Self {
            alphabet: 8,
            max_len: COPY_MAX_LEN,
            blanks: COPY_BLANKS,
            variable: false,
        }
    }
}

impl CopyTask {
    pub fn variable() -> Self {
        Self {
            variable: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alphabet == 0 || self.alphabet > DATA_CHARS.len() {
            return Err(Error::Config(format!(
                "copy alphabet must be within 1..={}",
                DATA_CHARS.len()
            )));
        }
        if self.max_len == 0 {
            return Err(Error::Config("copy length must be >= 1".into()));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        let mut s: String = DATA_CHARS.chars().take(self.alphabet).collect();
        s.push(BLANK);
        s.push(DELIMITER);
        Vocab::from_chars(&s)
    }

    pub fn blank(&self) -> usize {
        self.alphabet
    }

    pub fn delimiter(&self) -> usize {
        self.alphabet + 1
    }

    /// Longest possible episode.
    pub fn max_steps(&self) -> usize {
        2 * self.max_len + self.blanks + 1
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Episode {
        let k = if self.variable {
            rng.random_range(1..=self.max_len)
        } else {
            self.max_len
        };
        let data: Vec<usize> = (0..k).map(|_| rng.random_range(0..self.alphabet)).collect();
        let blank = self.blank();
        let mut inputs = data.clone();
        inputs.extend(std::iter::repeat_n(blank, self.blanks));
        inputs.push(self.delimiter());
        inputs.extend(std::iter::repeat_n(blank, k));
        let lead = k + self.blanks + 1;
        let mut targets = vec![blank; lead];
        targets.extend(&data);
        let mut mask = vec![false; lead];
        mask.extend(std::iter::repeat_n(true, k));
        Episode {
            inputs,
            targets,
            mask,
        }
    }
}

/// Episode `index` of the copy stream for `seed`; pure in `(seed, index)`.
pub fn copy_episode(task: &CopyTask, seed: u64, index: u64) -> Episode {
    task.generate(&mut stream_rng(seed, index))
}
