use std::sync::Arc;

use rand::Rng;

use super::params::{ParamId, ParamStore, TapeParams};
use super::{init_bound, State};
use crate::autodiff::{Tape, Tensor, Var};
use crate::complex::Permutation;
use crate::error::{Error, Result};

/// `h_t = P h_{t-1} + W x_t` with a fixed random `P`; only `W` (and the
/// model's output head) is trained.
#[derive(Debug, Clone)]
pub struct PermutationRnn {
    pub n_in: usize,
    pub n_h: usize,
    pub w: ParamId,
    perm: Permutation,
    index: Arc<[usize]>,
}

impl PermutationRnn {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        n_in: usize,
        n_h: usize,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let perm = Permutation::random(n_h, rng);
        let w = store.add(
            format!("{prefix}.w"),
            Tensor::uniform(n_in, n_h, init_bound(n_in), rng),
        );
        let index = perm.map().iter().copied().collect();
        Self {
            n_in,
            n_h,
            w,
            perm,
            index,
        }
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    pub fn set_permutation(&mut self, perm: Permutation) -> Result<()> {
        if perm.len() != self.n_h {
            return Err(Error::LengthMismatch {
                expected: self.n_h,
                got: perm.len(),
            });
        }
        self.index = perm.map().iter().copied().collect();
        self.perm = perm;
        Ok(())
    }

    pub fn hidden_size(&self) -> usize {
        self.n_h
    }

    pub fn zero_state(&self, batch: usize) -> Vec<Tensor> {
        vec![Tensor::zeros(batch, self.n_h)]
    }

    pub fn step(&self, tape: &mut Tape, p: &TapeParams, state: &State, x: Var) -> Result<(State, Var)> {
        let ph = tape.gather(state[0], self.index.clone())?;
        let wx = tape.matmul(x, p.p(self.w))?;
        let h = tape.add(ph, wx)?;
        Ok((vec![h], h))
    }
}
