//! Unitary RNN and its multiplicative (input-conditioned) variant.
//!
//! `h_t = modReLU(W h_{t-1} + V x_t)` with
//! `W = D₃ R₂ F⁻¹ D₂ P R₁ F D₁`: `D` are diagonal phase matrices,
//! `R = I − 2 v v† / ‖v‖²` are complex reflections, `F` is the unitary DFT
//! and `P` a fixed permutation. The multiplicative variant computes each
//! diagonal's phases as `W_xr x_t` instead of learning them directly.

use std::f64::consts::{PI, TAU};
use std::sync::Arc;

use rand::Rng;

use super::params::{ParamId, ParamStore, TapeParams};
use super::{init_bound, State};
use crate::autodiff::complex::{join, modrelu, split, CVar};
use crate::autodiff::{Tape, Tensor, Var};
use crate::complex::Permutation;
use crate::error::{Error, Result};

/// Lower bound on `‖v‖²` of a reflection vector.
const REFLECTION_NORM2_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseSource {
    /// Learned phase vectors, one per diagonal.
    Learned,
    /// Phases `W_xr x_t`, one matrix per diagonal.
    Input,
}

#[derive(Debug, Clone)]
pub struct UnitaryRnn {
    pub n_in: usize,
    pub n_h: usize,
    pub phase_source: PhaseSource,
    /// `D₁, D₂, D₃`: `[1, n]` phases or `[n_in, n]` input maps.
    pub diagonals: [ParamId; 3],
    /// `R₁, R₂` as stacked `[1, N_h]` complex vectors.
    pub reflections: [ParamId; 2],
    pub v: ParamId,
    pub bias: ParamId,
    perm: Permutation,
    index: Arc<[usize]>,
    dft_re: Tensor,
    dft_im: Tensor,
    /// Position of `[F_re, F_im]` in the model's fixed-tensor list.
    pub(crate) fixed_offset: usize,
}

/// Unitary DFT `F[j][k] = e^{-2πi jk/n} / √n` as `(re, im)`; symmetric.
pub fn dft_matrix(n: usize) -> (Tensor, Tensor) {
    let norm = 1.0 / (n as f64).sqrt();
    let angle = |j: usize, k: usize| -TAU * ((j * k) % n) as f64 / n as f64;
    (
        Tensor::from_fn(n, n, |j, k| angle(j, k).cos() * norm),
        Tensor::from_fn(n, n, |j, k| angle(j, k).sin() * norm),
    )
}

impl UnitaryRnn {
    pub fn new<R: Rng + ?Sized>(
        prefix: &str,
        n_in: usize,
        n_h: usize,
        phase_source: PhaseSource,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        if n_h < 2 || n_h % 2 != 0 {
            return Err(Error::OddLength(n_h));
        }
        let n = n_h / 2;
        let perm = Permutation::random(n, rng);
        let diagonals = [1, 2, 3].map(|k| {
            let t = match phase_source {
                PhaseSource::Learned => Tensor::from_fn(1, n, |_, _| rng.random_range(-PI..PI)),
                PhaseSource::Input => Tensor::uniform(n_in, n, init_bound(n_in), rng),
            };
            let name = match phase_source {
                PhaseSource::Learned => format!("{prefix}.d{k}"),
                PhaseSource::Input => format!("{prefix}.w_xr{k}"),
            };
            store.add(name, t)
        });
        let reflections =
            [1, 2].map(|k| store.add(format!("{prefix}.r{k}"), Tensor::uniform(1, n_h, 1.0, rng)));
        let v = store.add(
            format!("{prefix}.v"),
            Tensor::uniform(n_in, n_h, init_bound(n_in), rng),
        );
        let bias = store.add(format!("{prefix}.b"), Tensor::zeros(1, n));
        let (dft_re, dft_im) = dft_matrix(n);
        let index = perm.map().iter().copied().collect();
        Ok(Self {
            n_in,
            n_h,
            phase_source,
            diagonals,
            reflections,
            v,
            bias,
            perm,
            index,
            dft_re,
            dft_im,
            fixed_offset: 0,
        })
    }

    pub fn permutation(&self) -> &Permutation {
        &self.perm
    }

    pub fn set_permutation(&mut self, perm: Permutation) -> Result<()> {
        if perm.len() != self.n_h / 2 {
            return Err(Error::LengthMismatch {
                expected: self.n_h / 2,
                got: perm.len(),
            });
        }
        self.index = perm.map().iter().copied().collect();
        self.perm = perm;
        Ok(())
    }

    pub fn fixed_tensors(&self) -> Vec<&Tensor> {
        vec![&self.dft_re, &self.dft_im]
    }

    pub fn hidden_size(&self) -> usize {
        self.n_h
    }

    pub fn zero_state(&self, batch: usize) -> Vec<Tensor> {
        vec![Tensor::zeros(batch, self.n_h)]
    }

    fn diagonal(&self, tape: &mut Tape, p: &TapeParams, k: usize, x: Var, z: CVar) -> Result<CVar> {
        let theta = match self.phase_source {
            PhaseSource::Learned => p.p(self.diagonals[k]),
            PhaseSource::Input => tape.matmul(x, p.p(self.diagonals[k]))?,
        };
        let c = tape.cos(theta);
        let s = tape.sin(theta);
        let cr = tape.mul(c, z.re)?;
        let si = tape.mul(s, z.im)?;
        let sr = tape.mul(s, z.re)?;
        let ci = tape.mul(c, z.im)?;
        Ok(CVar {
            re: tape.sub(cr, si)?,
            im: tape.add(sr, ci)?,
        })
    }

    fn fourier(&self, tape: &mut Tape, p: &TapeParams, z: CVar, inverse: bool) -> Result<CVar> {
        let (fr, fi) = (p.fixed[self.fixed_offset], p.fixed[self.fixed_offset + 1]);
        // F is symmetric, so the row-vector product z·F equals (F z)ᵀ.
        // F⁻¹ = conj(F).
        let rr = tape.matmul(z.re, fr)?;
        let ii = tape.matmul(z.im, fi)?;
        let ri = tape.matmul(z.re, fi)?;
        let ir = tape.matmul(z.im, fr)?;
        Ok(if inverse {
            CVar {
                re: tape.add(rr, ii)?,
                im: tape.sub(ir, ri)?,
            }
        } else {
            CVar {
                re: tape.sub(rr, ii)?,
                im: tape.add(ri, ir)?,
            }
        })
    }

    fn reflect(&self, tape: &mut Tape, p: &TapeParams, k: usize, z: CVar) -> Result<CVar> {
        let v = split(tape, p.p(self.reflections[k]))?;
        let vr_t = tape.transpose(v.re);
        let vi_t = tape.transpose(v.im);
        // s = v† z per row
        let a = tape.matmul(z.re, vr_t)?;
        let b = tape.matmul(z.im, vi_t)?;
        let s_re = tape.add(a, b)?;
        let a = tape.matmul(z.im, vr_t)?;
        let b = tape.matmul(z.re, vi_t)?;
        let s_im = tape.sub(a, b)?;
        let n2r = tape.mul(v.re, v.re)?;
        let n2i = tape.mul(v.im, v.im)?;
        let n2r = tape.sum(n2r);
        let n2i = tape.sum(n2i);
        let norm2 = tape.add(n2r, n2i)?;
        let norm2 = tape.clamp_min(norm2, REFLECTION_NORM2_FLOOR);
        let k_re = tape.div(s_re, norm2)?;
        let k_re = tape.scale(k_re, 2.0);
        let k_im = tape.div(s_im, norm2)?;
        let k_im = tape.scale(k_im, 2.0);
        // z - k v, with k a complex scalar per row
        let a = tape.mul(k_re, v.re)?;
        let b = tape.mul(k_im, v.im)?;
        let kv_re = tape.sub(a, b)?;
        let a = tape.mul(k_re, v.im)?;
        let b = tape.mul(k_im, v.re)?;
        let kv_im = tape.add(a, b)?;
        Ok(CVar {
            re: tape.sub(z.re, kv_re)?,
            im: tape.sub(z.im, kv_im)?,
        })
    }

    /// The recurrent linear map `W h`, before the input and nonlinearity.
    /// `x` only matters for the multiplicative variant.
    pub fn linear(&self, tape: &mut Tape, p: &TapeParams, h: Var, x: Var) -> Result<Var> {
        let z = split(tape, h)?;
        let z = self.diagonal(tape, p, 0, x, z)?;
        let z = self.fourier(tape, p, z, false)?;
        let z = self.reflect(tape, p, 0, z)?;
        let z = CVar {
            re: tape.gather(z.re, self.index.clone())?,
            im: tape.gather(z.im, self.index.clone())?,
        };
        let z = self.diagonal(tape, p, 1, x, z)?;
        let z = self.fourier(tape, p, z, true)?;
        let z = self.reflect(tape, p, 1, z)?;
        let z = self.diagonal(tape, p, 2, x, z)?;
        join(tape, z)
    }

    pub fn step(&self, tape: &mut Tape, p: &TapeParams, state: &State, x: Var) -> Result<(State, Var)> {
        let wh = self.linear(tape, p, state[0], x)?;
        let vx = tape.matmul(x, p.p(self.v))?;
        let pre = tape.add(wh, vx)?;
        let z = split(tape, pre)?;
        let out = modrelu(tape, z, p.p(self.bias))?;
        let h = join(tape, out)?;
        Ok((vec![h], h))
    }
}
