//! Command-line front end: `capacity`, `train`, `eval` and `dump`.
//!
//! Every command that writes files writes only inside its `--out`
//! directory, and writes `manifest.json` before anything else.

use std::fs;
use std::io::Write;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::cells::CellKind;
use crate::error::{Error, Result};
use crate::memory::{
    capacity_sweep, image_roundtrip, load_raw_frames, write_capacity_csv, CapacityReport, SweepSpec,
};
use crate::tasks::{copy_episode, CopyTask, Stream, TaskKind, COPY_BLANKS, COPY_MAX_LEN, TBPTT_WINDOW};
use crate::training::{evaluate, load_checkpoint, train_to_dir, Metrics, RunConfig, TaskData};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "holocell", version, about = "Holographic associative memory and recurrent-cell experiments")]
pub struct Cli {
    /// Cap on worker threads (default: all cores).
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Retrieval-error sweep over stored items and redundant copies.
    Capacity(CapacityArgs),
    /// Train a model on a task; writes a curve, a manifest and checkpoints.
    Train(TrainArgs),
    /// Evaluate a checkpoint; prints one JSON object.
    Eval(EvalArgs),
    /// Print task samples with a `^` line under the scored positions.
    Dump(DumpArgs),
}

/// A list of inclusive ranges, e.g. `1..100`, `50`, or `1..4,8,16..20`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntList(pub Vec<usize>);

fn parse_bound(s: &str) -> std::result::Result<usize, String> {
    s.trim().parse().map_err(|_| format!("'{s}' is not a non-negative integer"))
}

pub fn parse_int_list(s: &str) -> std::result::Result<IntList, String> {
    let mut out = Vec::new();
    for part in s.split(',') {
        let r: RangeInclusive<usize> = match part.split_once("..") {
            Some((a, b)) => {
                let (a, b) = (parse_bound(a)?, parse_bound(b.strip_prefix('=').unwrap_or(b))?);
                if a > b {
                    return Err(format!("empty range {a}..{b}"));
                }
                a..=b
            }
            None => {
                let v = parse_bound(part)?;
                v..=v
            }
        };
        out.extend(r);
    }
    Ok(IntList(out))
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    /// Numbers of stored items (`a..b` is inclusive).
    #[arg(long, value_parser = parse_int_list)]
    pub items: IntList,
    /// Numbers of redundant copies (`a..b` is inclusive).
    #[arg(long, value_parser = parse_int_list)]
    pub copies: IntList,
    /// Pair items and copies element-wise instead of taking their product.
    #[arg(long)]
    pub paired: bool,
    /// Real width of each stored vector.
    #[arg(long, default_value_t = 1024)]
    pub nh: usize,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    #[arg(long, env = "HOLOCELL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Output directory; without it the CSV goes to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Raw row-major image frames to store and reconstruct (needs --out).
    #[arg(long, requires_all = ["width", "height", "out"])]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// copy, copyvar, xml, assign, arith or bytes.
    #[arg(long)]
    pub task: TaskKind,
    /// lstm, alstm, permrnn, urnn or murnn.
    #[arg(long)]
    pub model: CellKind,
    #[arg(long, default_value_t = 128)]
    pub nh: usize,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub copies: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub heads: Option<u64>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub layers: u64,
    /// Sequences per minibatch (default 2; 10 for bytes).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub minibatch: Option<u64>,
    /// Truncated-backpropagation window for online tasks.
    #[arg(long, default_value_t = TBPTT_WINDOW as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub window: u64,
    #[arg(long, env = "HOLOCELL_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Optimizer steps (minibatches).
    #[arg(long, default_value_t = 1000)]
    pub steps: u64,
    #[arg(long, default_value_t = 500)]
    pub eval_every: u64,
    /// Episodes (copy tasks) or symbols (online tasks) per evaluation.
    #[arg(long)]
    pub eval_size: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub log_every: u64,
    /// Save a checkpoint every N steps (0: final only).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Initial forget-gate bias of gated cells.
    #[arg(long)]
    pub forget_bias: Option<f64>,
    /// Feed h into the Associative LSTM update (default for arith and bytes).
    #[arg(long, conflicts_with = "no_h_update")]
    pub use_h_update: bool,
    #[arg(long)]
    pub no_h_update: bool,
    /// Data symbols of the copy tasks.
    #[arg(long, default_value_t = 8)]
    pub copy_alphabet: usize,
    /// Byte corpus for the bytes task.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Trailing fraction of the corpus held out for evaluation.
    #[arg(long, default_value_t = 0.1)]
    pub test_fraction: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint manifest (`.json`).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Evaluation seed (default: the checkpoint's held-out seed).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Episodes or symbols (default: the training configuration's size).
    #[arg(short = 'n', long)]
    pub size: Option<usize>,
    /// Byte corpus, overriding the path stored in the checkpoint.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    /// copy, copyvar, xml, assign, arith or bytes.
    #[arg(long)]
    pub task: TaskKind,
    /// Episodes, units (blocks / expressions / documents) or byte windows.
    #[arg(short = 'n', long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, env = "HOLOCELL_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub copy_alphabet: usize,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Window length for the bytes task.
    #[arg(long, default_value_t = TBPTT_WINDOW)]
    pub window: usize,
}

/// Exit status for a failed command.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonFinite(_) => EXIT_NUMERIC,
        Error::Io { .. } | Error::Checkpoint(_) | Error::Json(_) | Error::Shape { .. } => EXIT_DATA,
        Error::Config(_)
        | Error::LengthMismatch { .. }
        | Error::OddLength(_)
        | Error::SingularKey { .. }
        | Error::InvalidPermutation(_)
        | Error::DegenerateQuery => EXIT_USAGE,
    }
}

/// Runs `cli`, sending standard output to `stdout`.
pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let command = cli.command;
    // Output is buffered so that a failing command prints nothing.
    let mut buf = Vec::new();
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| dispatch(command, &mut buf))?,
        None => dispatch(command, &mut buf)?,
    }
    stdout.write_all(&buf).map_err(stdout_err)
}

fn dispatch(command: Command, stdout: &mut Vec<u8>) -> Result<()> {
    match command {
        Command::Capacity(a) => cmd_capacity(a, stdout),
        Command::Train(a) => cmd_train(a, stdout),
        Command::Eval(a) => cmd_eval(a, stdout),
        Command::Dump(a) => cmd_dump(a, stdout),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Serialize)]
struct CapacityManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    items: &'a [usize],
    copies: &'a [usize],
    paired: bool,
    n_h: usize,
    n_trials: usize,
    seed: u64,
    image: Option<&'a Path>,
}

fn cmd_capacity(a: CapacityArgs, stdout: &mut Vec<u8>) -> Result<()> {
    let spec = SweepSpec {
        items: a.items.0.clone(),
        copies: a.copies.0.clone(),
        paired: a.paired,
        n_h: a.nh,
        n_trials: a.trials as usize,
        seed: a.seed,
    };
    let cells = spec.cells()?;
    let frames = match &a.image {
        Some(path) => Some(load_raw_frames(
            path,
            a.width.expect("required by clap"),
            a.height.expect("required by clap"),
            a.channels,
        )?),
        None => None,
    };
    let Some(out) = &a.out else {
        let reports = capacity_sweep(&spec)?;
        return write_capacity_csv(&reports, stdout).map_err(stdout_err);
    };
    create_dir(out)?;
    write_json(
        &out.join("manifest.json"),
        &CapacityManifest {
            tool: "holocell",
            version: env!("CARGO_PKG_VERSION"),
            command: "capacity",
            items: &spec.items,
            copies: &spec.copies,
            paired: spec.paired,
            n_h: spec.n_h,
            n_trials: spec.n_trials,
            seed: spec.seed,
            image: a.image.as_deref(),
        },
    )?;
    let reports = capacity_sweep(&spec)?;
    write_csv(&out.join("capacity.csv"), &reports)?;
    if let Some(frames) = frames {
        roundtrips(out, &frames, &cells, spec.seed)?;
    }
    Ok(())
}

fn write_csv(path: &Path, reports: &[CapacityReport]) -> Result<()> {
    let mut buf = Vec::new();
    write_capacity_csv(reports, &mut buf).expect("writing to memory");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reconstructs the first frame for every sweep cell that has enough frames.
fn roundtrips(out: &Path, frames: &[Vec<f64>], cells: &[(usize, usize)], seed: u64) -> Result<()> {
    let dir = out.join("reconstructions");
    create_dir(&dir)?;
    let mut csv = String::from("n_items,n_copies,mse\n");
    for &(items, copies) in cells.iter().filter(|(i, _)| *i <= frames.len()) {
        let r = image_roundtrip(&frames[..items], copies, seed)?;
        csv += &format!("{items},{copies},{:e}\n", r.mse);
        let path = dir.join(format!("items-{items}-copies-{copies}.raw"));
        fs::write(&path, r.reconstruction_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    let path = out.join("roundtrip.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))
}

fn train_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut c = RunConfig::new(a.task, a.model);
    let alstm_only = |flag: &str| {
        Err(Error::Config(format!("--{flag} only applies to the alstm model, not {}", a.model)))
    };
    if a.model != CellKind::Alstm {
        if a.copies.is_some() {
            return alstm_only("copies");
        }
        if a.heads.is_some() {
            return alstm_only("heads");
        }
        if a.use_h_update {
            return alstm_only("use-h-update");
        }
    }
    if a.forget_bias.is_some() && !matches!(a.model, CellKind::Lstm | CellKind::Alstm) {
        return Err(Error::Config(format!("--forget-bias needs a gated model, not {}", a.model)));
    }
    if a.data.is_some() && a.task != TaskKind::Bytes {
        return Err(Error::Config("--data only applies to the bytes task".into()));
    }
    c.n_h = a.nh;
    c.n_copies = a.copies.unwrap_or(1) as usize;
    c.n_heads = a.heads.unwrap_or(1) as usize;
    c.layers = a.layers as usize;
    if let Some(b) = a.minibatch {
        c.minibatch = b as usize;
    }
    c.tbptt_window = a.window as usize;
    c.seed = a.seed;
    c.max_steps = a.steps;
    c.eval_every = a.eval_every;
    c.eval_size = a.eval_size;
    c.log_every = a.log_every;
    c.checkpoint_every = a.checkpoint_every;
    c.learning_rate = a.lr;
    c.forget_bias = a.forget_bias.unwrap_or(0.0);
    if a.use_h_update {
        c.use_h_for_update = true;
    }
    if a.no_h_update {
        c.use_h_for_update = false;
    }
    c.copy_alphabet = a.copy_alphabet;
    c.data = a.data.clone();
    c.test_fraction = a.test_fraction;
    c.validate()?;
    Ok(c)
}

fn cmd_train(a: TrainArgs, stdout: &mut Vec<u8>) -> Result<()> {
    let config = train_config(&a)?;
    let outputs = train_to_dir(config, &a.out)?;
    let last = outputs.records.last();
    writeln!(
        stdout,
        "{}",
        serde_json::json!({
            "steps": last.map_or(0, |r| r.step),
            "final_eval": last.and_then(|r| r.eval.clone()),
            "curve": outputs.curve,
            "checkpoint": outputs.final_checkpoint,
        })
    )
    .map_err(stdout_err)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    checkpoint_step: u64,
    task: TaskKind,
    model: CellKind,
    seed: u64,
    size: usize,
    #[serde(flatten)]
    metrics: Metrics,
}

fn cmd_eval(a: EvalArgs, stdout: &mut Vec<u8>) -> Result<()> {
    let (model, manifest) = load_checkpoint(&a.checkpoint)?;
    let mut config = manifest.config.clone();
    if a.data.is_some() {
        config.data = a.data;
    }
    let data = TaskData::from_config(&config)?;
    if data.vocab() != manifest.vocab || model.spec().n_in != manifest.vocab.len() {
        return Err(Error::Checkpoint("vocabulary does not match the task".into()));
    }
    let seed = a.seed.unwrap_or(manifest.eval_seed);
    let size = a.size.unwrap_or_else(|| config.eval_size());
    let metrics = evaluate(&model, &data, size, seed)?;
    let report = EvalReport {
        checkpoint_step: manifest.step,
        task: config.task,
        model: config.model,
        seed,
        size,
        metrics,
    };
    let line = serde_json::to_string(&report)?;
    writeln!(stdout, "{line}").map_err(stdout_err)
}

fn cmd_dump(a: DumpArgs, stdout: &mut Vec<u8>) -> Result<()> {
    if a.data.is_some() && a.task != TaskKind::Bytes {
        return Err(Error::Config("--data only applies to the bytes task".into()));
    }
    let mut text = String::new();
    match a.task {
        TaskKind::Copy | TaskKind::Copyvar => {
            let task = CopyTask {
                alphabet: a.copy_alphabet,
                max_len: COPY_MAX_LEN,
                blanks: COPY_BLANKS,
                variable: a.task == TaskKind::Copyvar,
            };
            task.validate()?;
            let vocab = task.vocab();
            for i in 0..a.count as u64 {
                let ep = copy_episode(&task, a.seed, i);
                if i > 0 {
                    text.push('\n');
                }
                text += &format!("{}\n{}\n{}\n", vocab.render(&ep.inputs), vocab.render(&ep.targets), ep.mask_line());
            }
        }
        TaskKind::Bytes => {
            let path = a
                .data
                .as_ref()
                .ok_or_else(|| Error::Config("the bytes task needs --data".into()))?;
            if a.window == 0 {
                return Err(Error::Config("--window must be >= 1".into()));
            }
            let bytes: Arc<[u8]> = fs::read(path).map_err(|e| Error::io(path, e))?.into();
            let mut stream = Stream::from_bytes(bytes, 0, false)?;
            let vocab = stream.vocab().clone();
            for _ in 0..a.count {
                let Some(w) = stream.next_window(a.window) else {
                    break;
                };
                text += &format!("{}\n{}\n", vocab.render(&w.inputs), w.mask_line());
            }
        }
        task => {
            let mut stream = Stream::new(task, a.seed, 0)?;
            for _ in 0..a.count {
                let unit = stream.next_unit().expect("generated streams are unbounded");
                text += &format!("{}\n{}\n", unit.text, unit.mask_line());
            }
        }
    }
    stdout.write_all(text.as_bytes()).map_err(stdout_err)
}
