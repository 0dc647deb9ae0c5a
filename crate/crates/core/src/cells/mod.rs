//! Recurrent cells, layer stacking and the shared softmax output head.
//!
//! Every cell is a step function on a [`Tape`]: it takes the previous state
//! (a list of variables, `h` first) and one input batch, and returns the
//! next state and the layer output `h_t`.

mod assoc;
mod lstm;
mod params;
mod perm;
mod unitary;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use assoc::{AssocConfig, AssocLstm};
pub use lstm::Lstm;
pub use params::{ParamId, ParamStore, TapeParams};
pub use perm::PermutationRnn;
pub use unitary::{dft_matrix, PhaseSource, UnitaryRnn};

use crate::autodiff::{Tape, Tensor, Var};
use crate::complex::Permutation;
use crate::error::{Error, Result};

/// Recurrent state of one layer on a tape; `state[0]` is always `h`.
pub type State = Vec<Var>;

/// `1/√fan_in`, the half-width of the uniform weight initialization.
pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Alstm,
    Permrnn,
    Urnn,
    Murnn,
}

impl CellKind {
    pub const ALL: [CellKind; 5] = [
        CellKind::Lstm,
        CellKind::Alstm,
        CellKind::Permrnn,
        CellKind::Urnn,
        CellKind::Murnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Alstm => "alstm",
            CellKind::Permrnn => "permrnn",
            CellKind::Urnn => "urnn",
            CellKind::Murnn => "murnn",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CellKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub enum Cell {
    Lstm(Lstm),
    Assoc(AssocLstm),
    Perm(PermutationRnn),
    Unitary(UnitaryRnn),
}

impl Cell {
    pub fn hidden_size(&self) -> usize {
        match self {
            Cell::Lstm(c) => c.hidden_size(),
            Cell::Assoc(c) => c.hidden_size(),
            Cell::Perm(c) => c.hidden_size(),
            Cell::Unitary(c) => c.hidden_size(),
        }
    }

    pub fn zero_state(&self, batch: usize) -> Vec<Tensor> {
        match self {
            Cell::Lstm(c) => c.zero_state(batch),
            Cell::Assoc(c) => c.zero_state(batch),
            Cell::Perm(c) => c.zero_state(batch),
            Cell::Unitary(c) => c.zero_state(batch),
        }
    }

    pub fn step(&self, tape: &mut Tape, p: &TapeParams, state: &State, x: Var) -> Result<(State, Var)> {
        let n_in = match self {
            Cell::Lstm(c) => c.n_in,
            Cell::Assoc(c) => c.n_in,
            Cell::Perm(c) => c.n_in,
            Cell::Unitary(c) => c.n_in,
        };
        let sx = tape.shape(x);
        let sh = tape.shape(state[0]);
        if sx[1] != n_in || sh[1] != self.hidden_size() || sx[0] != sh[0] {
            return Err(Error::Shape {
                op: "cell step (input vs state)",
                lhs: sx,
                rhs: sh,
            });
        }
        match self {
            Cell::Lstm(c) => c.step(tape, p, state, x),
            Cell::Assoc(c) => c.step(tape, p, state, x),
            Cell::Perm(c) => c.step(tape, p, state, x),
            Cell::Unitary(c) => c.step(tape, p, state, x),
        }
    }

    /// Fixed (never trained) permutations held by this cell.
    pub fn permutations(&self) -> Vec<Permutation> {
        match self {
            Cell::Lstm(_) => Vec::new(),
            Cell::Assoc(c) => c.permutations().to_vec(),
            Cell::Perm(c) => vec![c.permutation().clone()],
            Cell::Unitary(c) => vec![c.permutation().clone()],
        }
    }

    pub fn set_permutations(&mut self, perms: Vec<Permutation>) -> Result<()> {
        match self {
            Cell::Lstm(_) if perms.is_empty() => Ok(()),
            Cell::Assoc(c) => c.set_permutations(perms),
            Cell::Perm(c) if perms.len() == 1 => c.set_permutation(perms.into_iter().next().unwrap()),
            Cell::Unitary(c) if perms.len() == 1 => {
                c.set_permutation(perms.into_iter().next().unwrap())
            }
            _ => Err(Error::Checkpoint(format!(
                "wrong number of permutations ({}) for cell",
                perms.len()
            ))),
        }
    }
}

/// Architecture hyperparameters; together with the seed they determine a
/// freshly initialized [`Model`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: CellKind,
    pub n_in: usize,
    pub n_out: usize,
    pub n_h: usize,
    pub layers: usize,
    pub n_copies: usize,
    pub n_heads: usize,
    pub use_h_for_update: bool,
    pub forget_bias: f64,
}

impl ModelSpec {
    pub fn new(kind: CellKind, n_in: usize, n_out: usize, n_h: usize) -> Self {
        Self {
            kind,
            n_in,
            n_out,
            n_h,
            layers: 1,
            n_copies: 1,
            n_heads: 1,
            use_h_for_update: false,
            forget_bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_in == 0 || self.n_out == 0 || self.n_h == 0 {
            return bad("sizes must be positive");
        }
        if self.layers == 0 {
            return bad("layers must be >= 1");
        }
        if self.n_copies == 0 {
            return bad("copies must be >= 1");
        }
        if self.n_heads == 0 {
            return bad("heads must be >= 1");
        }
        if self.kind != CellKind::Alstm {
            if self.n_copies != 1 || self.n_heads != 1 {
                return bad("copies/heads only apply to the associative LSTM");
            }
            if self.use_h_for_update {
                return bad("use_h_for_update only applies to the associative LSTM");
            }
        }
        if self.forget_bias != 0.0 && !matches!(self.kind, CellKind::Lstm | CellKind::Alstm) {
            return bad("forget bias only applies to gated cells");
        }
        if matches!(self.kind, CellKind::Alstm | CellKind::Urnn | CellKind::Murnn) && self.n_h % 2 != 0 {
            return bad("complex-valued cells need an even hidden size");
        }
        Ok(())
    }
}

/// A stack of recurrent layers followed by an affine softmax head.
#[derive(Debug, Clone)]
pub struct Model {
    spec: ModelSpec,
    cells: Vec<Cell>,
    w_out: ParamId,
    b_out: ParamId,
    store: ParamStore,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut store = ParamStore::new();
        let mut cells = Vec::with_capacity(spec.layers);
        let mut fixed = 0;
        let mut n_in = spec.n_in;
        for l in 0..spec.layers {
            let prefix = format!("l{l}");
            let mut cell = match spec.kind {
                CellKind::Lstm => Cell::Lstm(Lstm::new(
                    &prefix,
                    n_in,
                    spec.n_h,
                    spec.forget_bias,
                    &mut store,
                    rng,
                )),
                CellKind::Alstm => Cell::Assoc(AssocLstm::new(
                    &prefix,
                    AssocConfig {
                        n_in,
                        n_h: spec.n_h,
                        n_copies: spec.n_copies,
                        n_heads: spec.n_heads,
                        use_h_for_update: spec.use_h_for_update,
                        forget_bias: spec.forget_bias,
                    },
                    &mut store,
                    rng,
                )?),
                CellKind::Permrnn => {
                    Cell::Perm(PermutationRnn::new(&prefix, n_in, spec.n_h, &mut store, rng))
                }
                CellKind::Urnn | CellKind::Murnn => {
                    let source = if spec.kind == CellKind::Urnn {
                        PhaseSource::Learned
                    } else {
                        PhaseSource::Input
                    };
                    Cell::Unitary(UnitaryRnn::new(&prefix, n_in, spec.n_h, source, &mut store, rng)?)
                }
            };
            if let Cell::Unitary(u) = &mut cell {
                u.fixed_offset = fixed;
                fixed += u.fixed_tensors().len();
            }
            n_in = cell.hidden_size();
            cells.push(cell);
        }
        let w_out = store.add(
            "out.w",
            Tensor::uniform(n_in, spec.n_out, init_bound(n_in), rng),
        );
        let b_out = store.add("out.b", Tensor::zeros(1, spec.n_out));
        Ok(Self {
            spec,
            cells,
            w_out,
            b_out,
            store,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [Cell] {
        &mut self.cells
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Trainable scalars; permutations and DFT matrices are not counted.
    pub fn count_parameters(&self) -> usize {
        self.store.n_scalars()
    }

    fn fixed_on_tape(&self, tape: &mut Tape) -> Vec<Var> {
        self.cells
            .iter()
            .filter_map(|c| match c {
                Cell::Unitary(u) => Some(u.fixed_tensors()),
                _ => None,
            })
            .flatten()
            .map(|t| tape.constant(t.clone()))
            .collect()
    }

    /// Parameters as differentiable leaves.
    pub fn on_tape(&self, tape: &mut Tape) -> TapeParams {
        TapeParams {
            params: self.store.on_tape(tape),
            fixed: self.fixed_on_tape(tape),
        }
    }

    /// Caller-supplied parameter variables (in store order) plus the fixed
    /// matrices, e.g. for finite-difference checks.
    pub fn with_params(&self, tape: &mut Tape, params: Vec<Var>) -> TapeParams {
        TapeParams {
            params,
            fixed: self.fixed_on_tape(tape),
        }
    }

    /// Parameters as constants, for evaluation without gradients.
    pub fn on_tape_frozen(&self, tape: &mut Tape) -> TapeParams {
        TapeParams {
            params: self.store.on_tape_frozen(tape),
            fixed: self.fixed_on_tape(tape),
        }
    }

    /// Zero initial state for every layer.
    pub fn zero_state(&self, batch: usize) -> Vec<Vec<Tensor>> {
        self.cells.iter().map(|c| c.zero_state(batch)).collect()
    }

    /// Places a stored state on `tape` as constants (a truncation point).
    pub fn state_on_tape(tape: &mut Tape, state: &[Vec<Tensor>]) -> Vec<State> {
        state
            .iter()
            .map(|layer| layer.iter().map(|t| tape.constant(t.clone())).collect())
            .collect()
    }

    /// Reads state values back off a tape.
    pub fn state_values(tape: &Tape, state: &[State]) -> Vec<Vec<Tensor>> {
        state
            .iter()
            .map(|layer| layer.iter().map(|&v| tape.value(v).clone()).collect())
            .collect()
    }

    /// One time step through every layer; returns the new state and the
    /// top layer's `h_t`.
    pub fn stack_step(
        &self,
        tape: &mut Tape,
        p: &TapeParams,
        state: &[State],
        x: Var,
    ) -> Result<(Vec<State>, Var)> {
        if state.len() != self.cells.len() {
            return Err(Error::LengthMismatch {
                expected: self.cells.len(),
                got: state.len(),
            });
        }
        let mut input = x;
        let mut next = Vec::with_capacity(self.cells.len());
        for (cell, s) in self.cells.iter().zip(state) {
            let (ns, h) = cell.step(tape, p, s, input)?;
            next.push(ns);
            input = h;
        }
        Ok((next, input))
    }

    /// Affine output head: logits for the top layer's `h`.
    pub fn logits(&self, tape: &mut Tape, p: &TapeParams, h: Var) -> Result<Var> {
        let l = tape.matmul(h, p.p(self.w_out))?;
        tape.add(l, p.p(self.b_out))
    }

    /// `(state', logits)` for one step.
    pub fn step(
        &self,
        tape: &mut Tape,
        p: &TapeParams,
        state: &[State],
        x: Var,
    ) -> Result<(Vec<State>, Var)> {
        let (s, h) = self.stack_step(tape, p, state, x)?;
        let logits = self.logits(tape, p, h)?;
        Ok((s, logits))
    }

    pub fn permutations(&self) -> Vec<Vec<Permutation>> {
        self.cells.iter().map(Cell::permutations).collect()
    }

    pub fn set_permutations(&mut self, perms: Vec<Vec<Permutation>>) -> Result<()> {
        if perms.len() != self.cells.len() {
            return Err(Error::Checkpoint(format!(
                "{} permutation sets for {} layers",
                perms.len(),
                self.cells.len()
            )));
        }
        for (cell, p) in self.cells.iter_mut().zip(perms) {
            cell.set_permutations(p)?;
        }
        Ok(())
    }
}
