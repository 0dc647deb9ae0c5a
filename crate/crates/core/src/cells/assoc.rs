//! Associative LSTM.
//!
//! Gates are computed at half width and shared by the real and imaginary
//! halves. The update `u` and the input/output keys `r_i`, `r_o` pass
//! through `bound`. Every copy `s` of the cell state holds the same
//! key-value writes under its own fixed permutation `P_s` of the keys:
//!
//! ```text
//! c_s ← g_f ⊙ c_s + (P_s r_i) ⊛ (g_i ⊙ u)
//! h   = g_o ⊙ bound(mean_s (P_s r_o) ⊛ c_s)
//! ```
//!
//! All copies are updated as one `[batch, n_copies · N_h/2]` tensor per
//! complex half. With several heads, each head has its own keys and
//! update, all heads write into the same copies, and the per-head reads
//! are concatenated into `h`.

use std::sync::Arc;

use rand::Rng;

use super::params::{ParamId, ParamStore, TapeParams};
use super::{init_bound, State};
use crate::autodiff::complex::{bound, mul as cmul, CVar};
use crate::autodiff::{Tape, Tensor, Var};
use crate::complex::Permutation;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AssocLstm {
    pub n_in: usize,
    /// Reals per head (`N_h`), i.e. `N_h / 2` complex cells per copy.
    pub n_h: usize,
    pub n_copies: usize,
    pub n_heads: usize,
    pub use_h_for_update: bool,
    pub w_xh: ParamId,
    pub w_hh: ParamId,
    pub b_h: ParamId,
    pub w_xu: ParamId,
    /// Absent when `h_{t-1}` does not feed the update.
    pub w_hu: Option<ParamId>,
    pub b_u: ParamId,
    perms: Vec<Permutation>,
    /// `key_index[s·n + j] = P_s[j]`: gathers every copy's permuted key.
    key_index: Arc<[usize]>,
    /// `tile_index[s·n + j] = j`: repeats a half-width vector per copy.
    tile_index: Arc<[usize]>,
}

#[derive(Debug, Clone, Copy)]
pub struct AssocConfig {
    pub n_in: usize,
    pub n_h: usize,
    pub n_copies: usize,
    pub n_heads: usize,
    pub use_h_for_update: bool,
    pub forget_bias: f64,
}

impl AssocLstm {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        cfg: AssocConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if cfg.n_h < 2 || cfg.n_h % 2 != 0 {
            return Err(Error::OddLength(cfg.n_h));
        }
        if cfg.n_copies == 0 {
            return Err(Error::Config("n_copies must be >= 1".into()));
        }
        if cfg.n_heads == 0 {
            return Err(Error::Config("n_heads must be >= 1".into()));
        }
        let half = cfg.n_h / 2;
        let perms: Vec<Permutation> = (0..cfg.n_copies)
            .map(|s| {
                if s == 0 {
                    Permutation::identity(half)
                } else {
                    Permutation::random(half, rng)
                }
            })
            .collect();
        let hidden = cfg.n_heads * cfg.n_h;
        let gates = 3 * half + 2 * cfg.n_heads * cfg.n_h;
        let w_xh = store.add(
            format!("{prefix}.w_xh"),
            Tensor::uniform(cfg.n_in, gates, init_bound(cfg.n_in), rng),
        );
        let w_hh = store.add(
            format!("{prefix}.w_hh"),
            Tensor::uniform(hidden, gates, init_bound(hidden), rng),
        );
        let mut b = Tensor::zeros(1, gates);
        b.data_mut()[..half].fill(cfg.forget_bias);
        let b_h = store.add(format!("{prefix}.b_h"), b);
        let w_xu = store.add(
            format!("{prefix}.w_xu"),
            Tensor::uniform(cfg.n_in, hidden, init_bound(cfg.n_in), rng),
        );
        let w_hu = cfg.use_h_for_update.then(|| {
            store.add(
                format!("{prefix}.w_hu"),
                Tensor::uniform(hidden, hidden, init_bound(hidden), rng),
            )
        });
        let b_u = store.add(format!("{prefix}.b_u"), Tensor::zeros(1, hidden));
        let mut cell = Self {
            n_in: cfg.n_in,
            n_h: cfg.n_h,
            n_copies: cfg.n_copies,
            n_heads: cfg.n_heads,
            use_h_for_update: cfg.use_h_for_update,
            w_xh,
            w_hh,
            b_h,
            w_xu,
            w_hu,
            b_u,
            perms: Vec::new(),
            key_index: Arc::from(Vec::new()),
            tile_index: Arc::from(Vec::new()),
        };
        cell.set_permutations(perms)?;
        Ok(cell)
    }

    pub fn permutations(&self) -> &[Permutation] {
        &self.perms
    }

    pub fn set_permutations(&mut self, perms: Vec<Permutation>) -> Result<()> {
        let half = self.n_h / 2;
        if perms.len() != self.n_copies {
            return Err(Error::LengthMismatch {
                expected: self.n_copies,
                got: perms.len(),
            });
        }
        if let Some(p) = perms.iter().find(|p| p.len() != half) {
            return Err(Error::LengthMismatch {
                expected: half,
                got: p.len(),
            });
        }
        self.key_index = perms.iter().flat_map(|p| p.map().iter().copied()).collect();
        self.tile_index = (0..self.n_copies).flat_map(|_| 0..half).collect();
        self.perms = perms;
        Ok(())
    }

    pub fn hidden_size(&self) -> usize {
        self.n_heads * self.n_h
    }

    /// `[h, c_re, c_im]`; the cell halves are `[batch, n_copies · N_h/2]`,
    /// copy-major.
    pub fn zero_state(&self, batch: usize) -> Vec<Tensor> {
        let width = self.n_copies * self.n_h / 2;
        vec![
            Tensor::zeros(batch, self.hidden_size()),
            Tensor::zeros(batch, width),
            Tensor::zeros(batch, width),
        ]
    }

    fn permuted(&self, tape: &mut Tape, z: CVar) -> Result<CVar> {
        Ok(CVar {
            re: tape.gather(z.re, self.key_index.clone())?,
            im: tape.gather(z.im, self.key_index.clone())?,
        })
    }

    fn tiled(&self, tape: &mut Tape, v: Var) -> Result<Var> {
        if self.n_copies == 1 {
            return Ok(v);
        }
        tape.gather(v, self.tile_index.clone())
    }

    pub fn step(&self, tape: &mut Tape, p: &TapeParams, state: &State, x: Var) -> Result<(State, Var)> {
        let (h, c_re, c_im) = (state[0], state[1], state[2]);
        let half = self.n_h / 2;
        let n = self.n_h;

        let xw = tape.matmul(x, p.p(self.w_xh))?;
        let hw = tape.matmul(h, p.p(self.w_hh))?;
        let pre = tape.add(xw, hw)?;
        let pre = tape.add(pre, p.p(self.b_h))?;

        let mut u_pre = tape.matmul(x, p.p(self.w_xu))?;
        if let Some(w_hu) = self.w_hu {
            let hu = tape.matmul(h, p.p(w_hu))?;
            u_pre = tape.add(u_pre, hu)?;
        }
        let u_pre = tape.add(u_pre, p.p(self.b_u))?;

        let gf = tape.slice(pre, 0, half)?;
        let gi = tape.slice(pre, half, 2 * half)?;
        let go = tape.slice(pre, 2 * half, 3 * half)?;
        let gf = tape.sigmoid(gf);
        let gi = tape.sigmoid(gi);
        let go = tape.sigmoid(go);

        let keys_at = 3 * half;
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut write: Option<CVar> = None;
        for hd in 0..self.n_heads {
            let ri = complex_slice(tape, pre, keys_at + hd * n, half)?;
            let ro = complex_slice(tape, pre, keys_at + (self.n_heads + hd) * n, half)?;
            let u = complex_slice(tape, u_pre, hd * n, half)?;
            let ri = bound(tape, ri)?;
            let ro = bound(tape, ro)?;
            let u = bound(tape, u)?;

            let v = CVar {
                re: tape.mul(gi, u.re)?,
                im: tape.mul(gi, u.im)?,
            };
            let v = CVar {
                re: self.tiled(tape, v.re)?,
                im: self.tiled(tape, v.im)?,
            };
            let ri_s = self.permuted(tape, ri)?;
            let w = cmul(tape, ri_s, v)?;
            write = Some(match write {
                None => w,
                Some(acc) => CVar {
                    re: tape.add(acc.re, w.re)?,
                    im: tape.add(acc.im, w.im)?,
                },
            });
            heads.push(ro);
        }
        let write = write.expect("n_heads >= 1");

        let gf_t = self.tiled(tape, gf)?;
        let keep_re = tape.mul(gf_t, c_re)?;
        let keep_im = tape.mul(gf_t, c_im)?;
        let c = CVar {
            re: tape.add(keep_re, write.re)?,
            im: tape.add(keep_im, write.im)?,
        };

        let mut reads = Vec::with_capacity(2 * self.n_heads);
        let inv = 1.0 / self.n_copies as f64;
        for ro in heads {
            let ro_s = self.permuted(tape, ro)?;
            let prod = cmul(tape, ro_s, c)?;
            let mean = if self.n_copies == 1 {
                prod
            } else {
                let sr = tape.fold_blocks(prod.re, half)?;
                let si = tape.fold_blocks(prod.im, half)?;
                CVar {
                    re: tape.scale(sr, inv),
                    im: tape.scale(si, inv),
                }
            };
            let r = bound(tape, mean)?;
            reads.push(tape.mul(go, r.re)?);
            reads.push(tape.mul(go, r.im)?);
        }
        let h = tape.concat(&reads)?;
        Ok((vec![h, c.re, c.im], h))
    }
}

fn complex_slice(tape: &mut Tape, v: Var, start: usize, half: usize) -> Result<CVar> {
    Ok(CVar {
        re: tape.slice(v, start, start + half)?,
        im: tape.slice(v, start + half, start + 2 * half)?,
    })
}
