use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::cells::{CellKind, ModelSpec};
use crate::error::{Error, Result};
use crate::tasks::{CopyTask, TaskKind, Vocab, COPY_BLANKS, COPY_MAX_LEN, TBPTT_WINDOW};

/// Held-out evaluation data is drawn from this seed, never from the
/// training seed.
pub fn eval_seed(seed: u64) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: TaskKind,
    pub model: CellKind,
    pub n_h: usize,
    pub n_copies: usize,
    pub n_heads: usize,
    pub layers: usize,
    pub minibatch: usize,
    pub tbptt_window: usize,
    pub seed: u64,
    pub max_steps: u64,
    pub eval_every: u64,
    /// Episodes (episodic tasks) or symbols (online tasks) per evaluation.
    pub eval_size: Option<usize>,
    pub log_every: u64,
    pub checkpoint_every: u64,
    pub learning_rate: f64,
    pub forget_bias: f64,
    pub use_h_for_update: bool,
    pub copy_alphabet: usize,
    pub data: Option<PathBuf>,
    pub test_fraction: f64,
}

impl RunConfig {
    /// Defaults for `task`: minibatch 2 (10 for bytes), windows of 100,
    /// evaluation every 500 steps, and `h` feeding the update only for the
    /// arithmetic and byte tasks.
    pub fn new(task: TaskKind, model: CellKind) -> Self {
        let use_h = matches!(task, TaskKind::Arith | TaskKind::Bytes) && model == CellKind::Alstm;
        Self {
            task,
            model,
            n_h: 128,
            n_copies: 1,
            n_heads: 1,
            layers: 1,
            minibatch: if task == TaskKind::Bytes { 10 } else { 2 },
            tbptt_window: TBPTT_WINDOW,
            seed: 0,
            max_steps: 1000,
            eval_every: 500,
            eval_size: None,
            log_every: 10,
            checkpoint_every: 0,
            learning_rate: AdamConfig::default().lr,
            forget_bias: 0.0,
            use_h_for_update: use_h,
            copy_alphabet: 8,
            data: None,
            test_fraction: 0.1,
        }
    }

    pub fn eval_size(&self) -> usize {
        self.eval_size
            .unwrap_or(if self.task.is_episodic() { 200 } else { 20_000 })
    }

    pub fn copy_task(&self) -> CopyTask {
        CopyTask {
            alphabet: self.copy_alphabet,
            max_len: COPY_MAX_LEN,
            blanks: COPY_BLANKS,
            variable: self.task == TaskKind::Copyvar,
        }
    }

    pub fn vocab(&self) -> Vocab {
        if self.task.is_episodic() {
            self.copy_task().vocab()
        } else {
            self.task.vocab()
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn model_spec(&self, vocab: usize) -> ModelSpec {
        ModelSpec {
            kind: self.model,
            n_in: vocab,
            n_out: vocab,
            n_h: self.n_h,
            layers: self.layers,
            n_copies: self.n_copies,
            n_heads: self.n_heads,
            use_h_for_update: self.use_h_for_update,
            forget_bias: self.forget_bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 {
            return Err(Error::Config("minibatch must be >= 1".into()));
        }
        if self.tbptt_window == 0 {
            return Err(Error::Config("tbptt window must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if self.task.is_episodic() {
            self.copy_task().validate()?;
        }
        if self.task == TaskKind::Bytes && self.data.is_none() {
            return Err(Error::Config("the bytes task needs a data file".into()));
        }
        self.model_spec(self.vocab().len()).validate()
    }
}
