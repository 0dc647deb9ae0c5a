//! Adam, the episodic and truncated-BPTT training drivers, evaluation,
//! learning curves and checkpoints.
//!
//! Every sequence of a minibatch gets its own tape. Sequences run in
//! parallel, and their losses and gradients are summed in batch order, so
//! results do not depend on the number of worker threads.

mod adam;
mod checkpoint;
mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointManifest, TensorEntry};
pub use config::{eval_seed, RunConfig};

use crate::autodiff::{Tape, Tensor, Var};
use crate::cells::Model;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tasks::{copy_episode, split_bytes, CopyTask, Episode, Stream, TaskKind, Vocab};

/// PRNG stream used for parameter initialization.
const INIT_STREAM: u64 = u64::MAX;
/// Parallel streams used to evaluate generated online tasks.
const EVAL_STREAMS: usize = 10;

pub const CURVE_CSV_HEADER: &str =
    "step,examples_seen,train_cost,eval_cost,masked_accuracy,exact_match,wall_seconds";

/// Per-layer recurrent state values of one sequence.
pub type SeqState = Vec<Vec<Tensor>>;

/// Task data resolved from a configuration.
#[derive(Debug, Clone)]
pub enum TaskData {
    Copy(CopyTask),
    Generated(TaskKind),
    Bytes { train: Arc<[u8]>, test: Arc<[u8]> },
}

impl TaskData {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Ok(match config.task {
            TaskKind::Copy | TaskKind::Copyvar => TaskData::Copy(config.copy_task()),
            TaskKind::Bytes => {
                let path = config
                    .data
                    .as_ref()
                    .ok_or_else(|| Error::Config("the bytes task needs a data file".into()))?;
                let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
                let (train, test) = split_bytes(&bytes, config.test_fraction)?;
                if train.len() < 2 || test.len() < 2 {
                    return Err(Error::Config(format!(
                        "{} is too small for a train/test split",
                        path.display()
                    )));
                }
                TaskData::Bytes {
                    train: train.into(),
                    test: test.into(),
                }
            }
            task => TaskData::Generated(task),
        })
    }

    pub fn is_episodic(&self) -> bool {
        matches!(self, TaskData::Copy(_))
    }

    pub fn vocab(&self) -> Vocab {
        match self {
            TaskData::Copy(c) => c.vocab(),
            TaskData::Generated(t) => t.vocab(),
            TaskData::Bytes { .. } => Vocab::bytes(),
        }
    }
}

/// Loss and bookkeeping for one sequence.
#[derive(Debug, Clone)]
pub struct SequenceOutcome {
    /// Summed cross-entropy over masked steps, in nats.
    pub loss: f64,
    pub n_masked: usize,
    pub n_correct: usize,
    /// Per masked step, in order: whether the arg-max prediction was right.
    pub hits: Vec<bool>,
    /// Per step: masked or not (needed to find contiguous masked runs).
    pub mask: Vec<bool>,
    pub final_state: SeqState,
    /// Gradient of `loss` for every trainable tensor, when requested.
    pub grads: Option<Vec<Tensor>>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Runs `model` over one sequence from `init` with one-hot inputs; the
/// output head is evaluated only on masked steps.
pub fn run_sequence(model: &Model, ep: &Episode, init: &[Vec<Tensor>], grads: bool) -> Result<SequenceOutcome> {
    let mut tape = Tape::new();
    let p = if grads {
        model.on_tape(&mut tape)
    } else {
        model.on_tape_frozen(&mut tape)
    };
    let n_in = model.spec().n_in;
    let mut state = Model::state_on_tape(&mut tape, init);
    let mut total: Option<Var> = None;
    let mut hits = Vec::new();
    for t in 0..ep.len() {
        let x = tape.constant(Tensor::one_hot(&ep.inputs[t..=t], n_in));
        let (s, h) = model.stack_step(&mut tape, &p, &state, x)?;
        state = s;
        if !ep.mask[t] {
            continue;
        }
        let logits = model.logits(&mut tape, &p, h)?;
        let ce = tape.softmax_cross_entropy(logits, &ep.targets[t..=t], &[true])?;
        hits.push(argmax(tape.value(logits).row_slice(0)) == ep.targets[t]);
        total = Some(match total {
            None => ce,
            Some(acc) => tape.add(acc, ce)?,
        });
    }
    let loss = total.map_or(0.0, |v| tape.value(v).item());
    if !loss.is_finite() {
        return Err(Error::NonFinite("training loss".into()));
    }
    let grads = if grads {
        if let Some(root) = total {
            tape.backward(root)?;
        }
        Some(
            p.params
                .iter()
                .map(|&v| match tape.grad(v) {
                    Some(g) => g.clone(),
                    None => {
                        let [r, c] = tape.shape(v);
                        Tensor::zeros(r, c)
                    }
                })
                .collect(),
        )
    } else {
        None
    };
    Ok(SequenceOutcome {
        loss,
        n_masked: hits.len(),
        n_correct: hits.iter().filter(|&&h| h).count(),
        hits,
        mask: ep.mask.clone(),
        final_state: Model::state_values(&tape, &state),
        grads,
    })
}

/// Runs a sequence in consecutive windows of `window` steps, carrying the
/// state across windows but cutting gradients at every boundary. Returns
/// the summed loss and the summed (truncated) gradients.
pub fn tbptt_gradients(
    model: &Model,
    ep: &Episode,
    init: &[Vec<Tensor>],
    window: usize,
) -> Result<(f64, Vec<Tensor>)> {
    if window == 0 {
        return Err(Error::Config("window must be >= 1".into()));
    }
    let mut state = init.to_vec();
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for start in (0..ep.len()).step_by(window) {
        let end = (start + window).min(ep.len());
        let piece = Episode {
            inputs: ep.inputs[start..end].to_vec(),
            targets: ep.targets[start..end].to_vec(),
            mask: ep.mask[start..end].to_vec(),
        };
        let out = run_sequence(model, &piece, &state, true)?;
        loss += out.loss;
        let g = out.grads.expect("requested");
        grads = Some(match grads {
            None => g,
            Some(mut acc) => {
                acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b));
                acc
            }
        });
        state = out.final_state;
    }
    let grads = grads.unwrap_or_else(|| zeros_like(model.params().tensors()));
    Ok((loss, grads))
}

fn zeros_like(ts: &[Tensor]) -> Vec<Tensor> {
    ts.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
}

/// Counts contiguous runs of masked steps and how many were entirely
/// correct. Runs may span window boundaries.
#[derive(Debug, Clone, Copy, Default)]
struct RunTracker {
    open: Option<bool>,
    runs: usize,
    exact: usize,
}

impl RunTracker {
    fn feed(&mut self, out: &SequenceOutcome) {
        let mut hits = out.hits.iter();
        for &m in &out.mask {
            if m {
                let h = *hits.next().expect("one hit per masked step");
                self.open = Some(self.open.unwrap_or(true) && h);
            } else {
                self.close();
            }
        }
    }

    fn close(&mut self) {
        if let Some(ok) = self.open.take() {
            self.runs += 1;
            self.exact += ok as usize;
        }
    }
}

/// Evaluation summary. Episodic costs are nats per sequence, online costs
/// nats per masked symbol. `exact_match` is the fraction of contiguous
/// masked segments (a whole copy answer, an arithmetic result with its
/// terminator, …) predicted entirely correctly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub cost: f64,
    pub cost_unit: String,
    pub masked_accuracy: f64,
    pub exact_match: f64,
    pub masked_symbols: usize,
    pub segments: usize,
    pub sequences: usize,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Evaluates on `n` fresh episodes (episodic tasks) or about `n` stream
/// symbols (online tasks) drawn from `seed`. No parameter is modified.
pub fn evaluate(model: &Model, data: &TaskData, n: usize, seed: u64) -> Result<Metrics> {
    let mut tracker = RunTracker::default();
    let (mut loss, mut masked, mut correct) = (0.0, 0, 0);
    match data {
        TaskData::Copy(task) => {
            let eps: Vec<Episode> = (0..n as u64).map(|i| copy_episode(task, seed, i)).collect();
            let init = model.zero_state(1);
            let outs: Vec<SequenceOutcome> = eps
                .par_iter()
                .map(|e| run_sequence(model, e, &init, false))
                .collect::<Result<_>>()?;
            for o in &outs {
                loss += o.loss;
                masked += o.n_masked;
                correct += o.n_correct;
                tracker.feed(o);
                tracker.close();
            }
            Ok(Metrics {
                cost: if n == 0 { 0.0 } else { loss / n as f64 },
                cost_unit: "nats/sequence".into(),
                masked_accuracy: ratio(correct, masked),
                exact_match: ratio(tracker.exact, tracker.runs),
                masked_symbols: masked,
                segments: tracker.runs,
                sequences: n,
            })
        }
        TaskData::Generated(_) | TaskData::Bytes { .. } => {
            let (mut streams, per_stream) = match data {
                TaskData::Generated(task) => {
                    let k = EVAL_STREAMS.min(n.max(1));
                    let streams = (0..k as u64)
                        .map(|s| Stream::new(*task, seed, s))
                        .collect::<Result<Vec<_>>>()?;
                    (streams, n / k)
                }
                TaskData::Bytes { test, .. } => (vec![Stream::from_bytes(test.clone(), 0, false)?], n),
                TaskData::Copy(_) => unreachable!(),
            };
            let results: Vec<(f64, usize, usize, RunTracker)> = streams
                .par_iter_mut()
                .map(|stream| -> Result<_> {
                    let mut state = model.zero_state(1);
                    let mut tr = RunTracker::default();
                    let (mut l, mut m, mut c) = (0.0, 0, 0);
                    let mut left = per_stream;
                    while left > 0 {
                        let Some(w) = stream.next_window(left.min(crate::tasks::TBPTT_WINDOW)) else {
                            break;
                        };
                        left -= w.len();
                        let o = run_sequence(model, &w, &state, false)?;
                        l += o.loss;
                        m += o.n_masked;
                        c += o.n_correct;
                        tr.feed(&o);
                        state = o.final_state;
                    }
                    tr.close();
                    Ok((l, m, c, tr))
                })
                .collect::<Result<_>>()?;
            for (l, m, c, tr) in &results {
                loss += l;
                masked += m;
                correct += c;
                tracker.runs += tr.runs;
                tracker.exact += tr.exact;
            }
            Ok(Metrics {
                cost: if masked == 0 { 0.0 } else { loss / masked as f64 },
                cost_unit: "nats/symbol".into(),
                masked_accuracy: ratio(correct, masked),
                exact_match: ratio(tracker.exact, tracker.runs),
                masked_symbols: masked,
                segments: tracker.runs,
                sequences: results.len(),
            })
        }
    }
}

/// Summed, normalized minibatch gradients before the optimizer sees them.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// Minibatch objective: mean nats per sequence (episodic) or nats per
    /// masked symbol (online).
    pub cost: f64,
    pub n_masked: usize,
    pub grads: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRecord {
    pub step: u64,
    pub examples_seen: u64,
    pub train_cost: f64,
    pub eval: Option<Metrics>,
    pub wall_seconds: f64,
}

impl CurveRecord {
    pub fn csv_row(&self) -> String {
        let (ec, acc, em) = match &self.eval {
            Some(m) => (
                m.cost.to_string(),
                m.masked_accuracy.to_string(),
                m.exact_match.to_string(),
            ),
            None => Default::default(),
        };
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.step, self.examples_seen, self.train_cost, ec, acc, em, self.wall_seconds
        )
    }
}

#[derive(Debug, Clone)]
enum Feed {
    Episodes(CopyTask),
    Streams { streams: Vec<Stream>, states: Vec<SeqState> },
}

/// Owns the model, the optimizer and the training data position.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: RunConfig,
    data: TaskData,
    model: Model,
    adam: Adam,
    feed: Feed,
    step: u64,
    examples_seen: u64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let data = TaskData::from_config(&config)?;
        let spec = config.model_spec(data.vocab().len());
        let model = Model::new(spec, &mut stream_rng(config.seed, INIT_STREAM))?;
        let adam = Adam::new(config.adam(), model.params().tensors());
        let b = config.minibatch;
        let feed = match &data {
            TaskData::Copy(task) => Feed::Episodes(*task),
            TaskData::Generated(task) => Feed::Streams {
                streams: (0..b as u64)
                    .map(|s| Stream::new(*task, config.seed, s))
                    .collect::<Result<_>>()?,
                states: vec![model.zero_state(1); b],
            },
            TaskData::Bytes { train, .. } => Feed::Streams {
                streams: (0..b)
                    .map(|s| Stream::from_bytes(train.clone(), s * train.len() / b, true))
                    .collect::<Result<_>>()?,
                states: vec![model.zero_state(1); b],
            },
        };
        Ok(Self {
            config,
            data,
            model,
            adam,
            feed,
            step: 0,
            examples_seen: 0,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn data(&self) -> &TaskData {
        &self.data
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn optimizer(&self) -> &Adam {
        &self.adam
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn examples_seen(&self) -> u64 {
        self.examples_seen
    }

    /// Draws the next minibatch, runs forward and backward passes and
    /// returns the normalized gradient sum. Advances the data position and
    /// carried stream state, but not the parameters.
    pub fn compute_gradients(&mut self) -> Result<BatchGradients> {
        let b = self.config.minibatch;
        let model = &self.model;
        let outs: Vec<SequenceOutcome> = match &mut self.feed {
            Feed::Episodes(task) => {
                let base = self.step * b as u64;
                let eps: Vec<Episode> = (0..b as u64).map(|i| copy_episode(task, self.config.seed, base + i)).collect();
                let init = model.zero_state(1);
                eps.par_iter()
                    .map(|e| run_sequence(model, e, &init, true))
                    .collect::<Result<_>>()?
            }
            Feed::Streams { streams, states } => {
                let window = self.config.tbptt_window;
                let wins: Vec<Episode> = streams
                    .iter_mut()
                    .map(|s| s.next_window(window).expect("training streams are unbounded"))
                    .collect();
                let outs: Vec<SequenceOutcome> = wins
                    .par_iter()
                    .zip(states.par_iter())
                    .map(|(w, s)| run_sequence(model, w, s, true))
                    .collect::<Result<_>>()?;
                for (s, o) in states.iter_mut().zip(&outs) {
                    *s = o.final_state.clone();
                }
                outs
            }
        };
        let n_masked: usize = outs.iter().map(|o| o.n_masked).sum();
        let loss: f64 = outs.iter().map(|o| o.loss).sum();
        let norm = if self.data.is_episodic() {
            b as f64
        } else {
            n_masked.max(1) as f64
        };
        let mut grads = zeros_like(self.model.params().tensors());
        for o in &outs {
            for (acc, g) in grads.iter_mut().zip(o.grads.as_ref().expect("requested")) {
                acc.add_assign(g);
            }
        }
        let inv = 1.0 / norm;
        for g in &mut grads {
            g.data_mut().iter_mut().for_each(|v| *v *= inv);
        }
        Ok(BatchGradients {
            cost: loss / norm,
            n_masked,
            grads,
        })
    }

    /// Hands `g` to Adam unchanged and advances the step counter.
    pub fn apply(&mut self, g: &BatchGradients) -> Result<()> {
        self.adam
            .step(self.model.params_mut().tensors_mut(), &g.grads)?;
        self.step += 1;
        self.examples_seen += self.config.minibatch as u64;
        Ok(())
    }

    /// One optimizer step; returns the minibatch cost.
    pub fn train_step(&mut self) -> Result<f64> {
        let g = self.compute_gradients()?;
        self.apply(&g)?;
        Ok(g.cost)
    }

    /// Evaluation with the configured size and held-out seed.
    pub fn evaluate(&self) -> Result<Metrics> {
        evaluate(&self.model, &self.data, self.config.eval_size(), eval_seed(self.config.seed))
    }

    /// Trains until `max_steps`, evaluating every `eval_every` steps and at
    /// the end. `on_record` sees each logged record and may stop the run.
    pub fn run<F>(&mut self, mut on_record: F) -> Result<Vec<CurveRecord>>
    where
        F: FnMut(&Trainer, &CurveRecord) -> Result<ControlFlow<()>>,
    {
        let started = Instant::now();
        let mut records = Vec::new();
        while self.step < self.config.max_steps {
            let cost = self.train_step()?;
            let last = self.step == self.config.max_steps;
            let eval_now = last || (self.config.eval_every > 0 && self.step % self.config.eval_every == 0);
            let log_now = eval_now || (self.config.log_every > 0 && self.step % self.config.log_every == 0);
            if !log_now {
                continue;
            }
            let eval = if eval_now { Some(self.evaluate()?) } else { None };
            let record = CurveRecord {
                step: self.step,
                examples_seen: self.examples_seen,
                train_cost: cost,
                eval,
                wall_seconds: started.elapsed().as_secs_f64(),
            };
            let flow = on_record(self, &record)?;
            records.push(record);
            if flow.is_break() {
                break;
            }
        }
        Ok(records)
    }
}

/// Trains an episodic (copy) task and returns its learning curve.
pub fn train_episodic(config: RunConfig) -> Result<Vec<CurveRecord>> {
    if !config.task.is_episodic() {
        return Err(Error::Config(format!("'{}' is not an episodic task", config.task)));
    }
    Trainer::new(config)?.run(|_, _| Ok(ControlFlow::Continue(())))
}

/// Trains an online task with truncated backpropagation.
pub fn train_online(config: RunConfig) -> Result<Vec<CurveRecord>> {
    if config.task.is_episodic() {
        return Err(Error::Config(format!("'{}' is not an online task", config.task)));
    }
    Trainer::new(config)?.run(|_, _| Ok(ControlFlow::Continue(())))
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: &'a RunConfig,
    eval_seed: u64,
    parameters: usize,
    vocab: Vocab,
}

/// Paths written by [`train_to_dir`].
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub manifest: PathBuf,
    pub curve: PathBuf,
    pub final_checkpoint: PathBuf,
    pub records: Vec<CurveRecord>,
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Full training run writing into `out`: `manifest.json` first, then
/// `curve.csv` as training proceeds, periodic checkpoints under
/// `checkpoints/`, and `checkpoints/final.{json,bin}`.
pub fn train_to_dir(config: RunConfig, out: &Path) -> Result<RunOutputs> {
    let mut trainer = Trainer::new(config)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let manifest = out.join("manifest.json");
    let m = RunManifest {
        tool: "holocell",
        version: env!("CARGO_PKG_VERSION"),
        command: "train",
        config: trainer.config(),
        eval_seed: eval_seed(trainer.config().seed),
        parameters: trainer.model().count_parameters(),
        vocab: trainer.data().vocab(),
    };
    let mut w = create_file(&manifest)?;
    serde_json::to_writer_pretty(&mut w, &m)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(&manifest, e))?;

    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let curve = out.join("curve.csv");
    let mut csv = create_file(&curve)?;
    writeln!(csv, "{CURVE_CSV_HEADER}").map_err(|e| Error::io(&curve, e))?;
    let every = trainer.config().checkpoint_every;
    let records = trainer.run(|t, r| {
        writeln!(csv, "{}", r.csv_row())
            .and_then(|_| csv.flush())
            .map_err(|e| Error::io(&curve, e))?;
        if every > 0 && r.step % every == 0 && r.step < t.config().max_steps {
            save_checkpoint(&ckpt_dir, &format!("step-{}", r.step), t.model(), t.config(), r.step)?;
        }
        Ok(ControlFlow::Continue(()))
    })?;
    let final_checkpoint = save_checkpoint(&ckpt_dir, "final", trainer.model(), trainer.config(), trainer.step())?;
    Ok(RunOutputs {
        manifest,
        curve,
        final_checkpoint,
        records,
    })
}

#[cfg(test)]
mod tests;
