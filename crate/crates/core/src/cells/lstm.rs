use rand::Rng;

use super::params::{ParamId, ParamStore, TapeParams};
use super::{init_bound, State};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

/// LSTM with forget gates, no peepholes.
///
/// One matrix pair produces the pre-activations in the fixed block order
/// `[g_f, g_i, g_o, u]`, each `n_h` wide.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub n_in: usize,
    pub n_h: usize,
    pub w_xh: ParamId,
    pub w_hh: ParamId,
    pub b_h: ParamId,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        n_in: usize,
        n_h: usize,
        forget_bias: f64,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Self {
        let w_xh = store.add(
            format!("{prefix}.w_xh"),
            Tensor::uniform(n_in, 4 * n_h, init_bound(n_in), rng),
        );
        let w_hh = store.add(
            format!("{prefix}.w_hh"),
            Tensor::uniform(n_h, 4 * n_h, init_bound(n_h), rng),
        );
        let mut b = Tensor::zeros(1, 4 * n_h);
        b.data_mut()[..n_h].fill(forget_bias);
        let b_h = store.add(format!("{prefix}.b_h"), b);
        Self {
            n_in,
            n_h,
            w_xh,
            w_hh,
            b_h,
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.n_h
    }

    /// `[h, c]`, both zero.
    pub fn zero_state(&self, batch: usize) -> Vec<Tensor> {
        vec![Tensor::zeros(batch, self.n_h), Tensor::zeros(batch, self.n_h)]
    }

    pub fn step(&self, tape: &mut Tape, p: &TapeParams, state: &State, x: Var) -> Result<(State, Var)> {
        let (h, c) = (state[0], state[1]);
        let n = self.n_h;
        let xw = tape.matmul(x, p.p(self.w_xh))?;
        let hw = tape.matmul(h, p.p(self.w_hh))?;
        let pre = tape.add(xw, hw)?;
        let pre = tape.add(pre, p.p(self.b_h))?;
        let gf = tape.slice(pre, 0, n)?;
        let gi = tape.slice(pre, n, 2 * n)?;
        let go = tape.slice(pre, 2 * n, 3 * n)?;
        let u = tape.slice(pre, 3 * n, 4 * n)?;
        let gf = tape.sigmoid(gf);
        let gi = tape.sigmoid(gi);
        let go = tape.sigmoid(go);
        let u = tape.tanh(u);
        let keep = tape.mul(gf, c)?;
        let write = tape.mul(gi, u)?;
        let c = tape.add(keep, write)?;
        let tc = tape.tanh(c);
        let h = tape.mul(go, tc)?;
        Ok((vec![h, c], h))
    }
}
