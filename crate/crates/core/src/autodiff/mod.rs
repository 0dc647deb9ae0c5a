//! Minimal reverse-mode differentiation over dense real tensors.
//!
//! Complex arithmetic is built from real ops in the split-halves layout
//! (see [`complex`]), so no complex-specific derivative rules exist.
//! Gradients are never clipped or rescaled here.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheck, REL_FLOOR};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

/// Complex helpers over `(re, im)` pairs of tape variables.
pub mod complex {
    use super::{Tape, Var};
    use crate::error::Result;

    /// Complex value stored as two `[rows, n]` variables.
    #[derive(Debug, Clone, Copy)]
    pub struct CVar {
        pub re: Var,
        pub im: Var,
    }

    /// Splits a `[rows, 2n]` stacked variable into halves.
    pub fn split(tape: &mut Tape, h: Var) -> Result<CVar> {
        let n = tape.shape(h)[1] / 2;
        Ok(CVar {
            re: tape.slice(h, 0, n)?,
            im: tape.slice(h, n, 2 * n)?,
        })
    }

    pub fn join(tape: &mut Tape, z: CVar) -> Result<Var> {
        tape.concat(&[z.re, z.im])
    }

    /// `a ⊛ b`.
    pub fn mul(tape: &mut Tape, a: CVar, b: CVar) -> Result<CVar> {
        let rr = tape.mul(a.re, b.re)?;
        let ii = tape.mul(a.im, b.im)?;
        let ri = tape.mul(a.re, b.im)?;
        let ir = tape.mul(a.im, b.re)?;
        Ok(CVar {
            re: tape.sub(rr, ii)?,
            im: tape.add(ri, ir)?,
        })
    }

    /// `|z|` per element.
    pub fn modulus(tape: &mut Tape, z: CVar) -> Result<Var> {
        let r2 = tape.mul(z.re, z.re)?;
        let i2 = tape.mul(z.im, z.im)?;
        let s = tape.add(r2, i2)?;
        Ok(tape.sqrt(s))
    }

    /// Divides each element by `max(1, |z|)`.
    pub fn bound(tape: &mut Tape, z: CVar) -> Result<CVar> {
        let m = modulus(tape, z)?;
        let d = tape.clamp_min(m, 1.0);
        Ok(CVar {
            re: tape.div(z.re, d)?,
            im: tape.div(z.im, d)?,
        })
    }

    /// `bound` on a stacked `[rows, 2n]` variable.
    pub fn bound_stacked(tape: &mut Tape, h: Var) -> Result<Var> {
        let z = split(tape, h)?;
        let b = bound(tape, z)?;
        join(tape, b)
    }

    /// Guard below which `z / |z|` is treated as zero in modReLU.
    pub const MODRELU_EPS: f64 = 1e-12;

    /// `z / |z| · max(0, |z| + bias)`; zero stays zero.
    pub fn modrelu(tape: &mut Tape, z: CVar, bias: Var) -> Result<CVar> {
        let m = modulus(tape, z)?;
        let a = tape.relu_shifted(m, bias)?;
        let safe = tape.clamp_min(m, MODRELU_EPS);
        let s = tape.div(a, safe)?;
        Ok(CVar {
            re: tape.mul(z.re, s)?,
            im: tape.mul(z.im, s)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::complex::*;
    use super::*;
    use crate::error::Error;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn elementary_values() {
        let mut t = Tape::new();
        let z = t.constant(Tensor::zeros(1, 3));
        let s = t.sigmoid(z);
        let h = t.tanh(z);
        assert!(t.value(s).data().iter().all(|&v| v == 0.5));
        assert!(t.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn uniform_logits_cost_ln_k() {
        let mut t = Tape::new();
        let l = t.constant(Tensor::filled(3, 7, 0.3));
        let ce = t.softmax_cross_entropy(l, &[0, 4, 6], &[true, true, false]).unwrap();
        assert!((t.value(ce).item() - 2.0 * 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matmul_identity() {
        let mut t = Tape::new();
        let x = Tensor::uniform(4, 3, 1.0, &mut rng(1));
        let i = t.constant(Tensor::identity(4));
        let xv = t.constant(x.clone());
        let y = t.matmul(i, xv).unwrap();
        assert_eq!(t.value(y), &x);
    }

    #[test]
    fn product_rule() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(2.0));
        let y = t.leaf(Tensor::scalar(3.0));
        let p = t.mul(x, y).unwrap();
        t.backward(p).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 3.0);
        assert_eq!(t.grad(y).unwrap().item(), 2.0);
    }

    #[test]
    fn fan_out_accumulates() {
        let mut t = Tape::new();
        let x = t.leaf(Tensor::scalar(3.0));
        let sq = t.mul(x, x).unwrap();
        let y = t.add(sq, x).unwrap();
        t.backward(y).unwrap();
        assert_eq!(t.grad(x).unwrap().item(), 7.0);
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::zeros(2, 3));
        let b = t.leaf(Tensor::zeros(2, 4));
        assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
        assert!(t.matmul(a, b).is_err());
        assert!(t.slice(a, 2, 5).is_err());
        assert!(t.gather(a, Arc::from(vec![3usize])).is_err());
        assert!(t.fold_blocks(a, 2).is_err());
        assert!(t.concat(&[]).is_err());
        assert!(matches!(t.backward(a), Err(Error::Shape { .. })));
    }

    #[test]
    fn bound_gradient_is_identity_inside_unit_disk() {
        let mut t = Tape::new();
        let h = t.leaf(Tensor::row(vec![0.3, -0.2, 0.4, 0.1]));
        let b = bound_stacked(&mut t, h).unwrap();
        let s = t.sum(b);
        t.backward(s).unwrap();
        assert_eq!(t.grad(h).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn bound_of_zero_has_finite_gradient() {
        let mut t = Tape::new();
        let h = t.leaf(Tensor::zeros(1, 4));
        let b = bound_stacked(&mut t, h).unwrap();
        let s = t.sum(b);
        t.backward(s).unwrap();
        assert!(t.grad(h).unwrap().is_finite());
    }

    #[test]
    fn modrelu_zero_bias_is_identity_and_zero_maps_to_zero() {
        let mut t = Tape::new();
        let re = t.leaf(Tensor::row(vec![0.3, -2.0, 0.0]));
        let im = t.leaf(Tensor::row(vec![0.1, 0.5, 0.0]));
        let b = t.leaf(Tensor::zeros(1, 3));
        let out = modrelu(&mut t, CVar { re, im }, b).unwrap();
        let got_re = t.value(out.re).data().to_vec();
        let got_im = t.value(out.im).data().to_vec();
        assert!((got_re[0] - 0.3).abs() < 1e-15 && (got_re[1] + 2.0).abs() < 1e-15);
        assert!((got_im[0] - 0.1).abs() < 1e-15 && (got_im[1] - 0.5).abs() < 1e-15);
        assert_eq!((got_re[2], got_im[2]), (0.0, 0.0));
        let s1 = t.sum(out.re);
        let s2 = t.sum(out.im);
        let s = t.add(s1, s2).unwrap();
        t.backward(s).unwrap();
        assert!(t.grad(b).unwrap().is_finite() && t.grad(re).unwrap().is_finite());
    }

    #[test]
    fn quadratic_grad_check_is_exact() {
        let w = Tensor::uniform(3, 4, 2.0, &mut rng(2));
        let rep = grad_check(
            |t: &mut Tape, v: &[Var]| {
                let sq = t.mul(v[0], v[0])?;
                Ok(t.sum(sq))
            },
            &[w],
            1e-5,
            None::<(usize, &mut ChaCha8Rng)>,
        )
        .unwrap();
        assert_eq!(rep.checked, 12);
        assert!(rep.max_rel_error < 1e-9, "{rep:?}");
    }

    #[test]
    fn kink_at_unit_modulus_is_flagged() {
        // (0.6, 0.8) sits exactly on |z| = 1.
        let h = Tensor::row(vec![0.6, 0.8]);
        let rep = grad_check(
            |t: &mut Tape, v: &[Var]| {
                let b = bound_stacked(t, v[0])?;
                Ok(t.sum(b))
            },
            &[h],
            1e-5,
            None::<(usize, &mut ChaCha8Rng)>,
        )
        .unwrap();
        assert_eq!(rep.kinks.len(), 2);
        assert_eq!(rep.checked, 0);
    }

    /// Every op against central differences in one composite function.
    #[test]
    fn every_op_matches_finite_differences() {
        let mut r = rng(3);
        let params = vec![
            Tensor::uniform(2, 6, 1.0, &mut r),
            Tensor::uniform(6, 4, 1.0, &mut r),
            Tensor::uniform(1, 4, 1.0, &mut r),
            Tensor::uniform(2, 4, 1.0, &mut r).map(|v| v.abs() + 0.5),
        ];
        let idx: Arc<[usize]> = Arc::from(vec![3usize, 0, 0, 2, 1, 3, 2, 1]);
        let f = |t: &mut Tape, v: &[Var]| {
            let m = t.matmul(v[0], v[1])?;
            let a = t.add(m, v[2])?;
            let s = t.sigmoid(a);
            let th = t.tanh(a);
            let p = t.mul(s, th)?;
            let q = t.div(p, v[3])?;
            let sq = t.sqrt(v[3]);
            let c = t.cos(q);
            let sn = t.sin(sq);
            let d = t.sub(c, sn)?;
            let cm = t.clamp_min(d, -0.1);
            let rl = t.relu_shifted(cm, v[2])?;
            let cat = t.concat(&[rl, q])?;
            let g = t.gather(cat, idx.clone())?;
            let fb = t.fold_blocks(g, 4)?;
            let sl = t.slice(fb, 1, 3)?;
            let tr = t.transpose(sl);
            let sr = t.sum_rows(tr);
            let sc = t.sum_cols(fb);
            let sc2 = t.scale(sc, 0.7);
            let mean = t.mean(sr);
            let logits = t.mul(fb, sc2)?;
            let ce = t.softmax_cross_entropy(logits, &[1, 3], &[true, true])?;
            t.add(ce, mean)
        };
        let rep = grad_check(f, &params, 1e-5, None::<(usize, &mut ChaCha8Rng)>).unwrap();
        assert!(rep.checked > 30);
        assert!(rep.max_rel_error < 1e-6, "{rep:?}");
    }

    #[test]
    fn backward_twice_is_bit_identical() {
        let mut r = rng(4);
        let mut t = Tape::new();
        let a = t.leaf(Tensor::uniform(3, 5, 1.0, &mut r));
        let b = t.leaf(Tensor::uniform(5, 2, 1.0, &mut r));
        let m = t.matmul(a, b).unwrap();
        let s = t.tanh(m);
        let l = t.sum(s);
        t.backward(l).unwrap();
        let (ga, gb) = (t.grad(a).unwrap().clone(), t.grad(b).unwrap().clone());
        t.backward(l).unwrap();
        assert_eq!(t.grad(a).unwrap(), &ga);
        assert_eq!(t.grad(b).unwrap(), &gb);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let c = t.constant(Tensor::scalar(2.0));
        let x = t.leaf(Tensor::scalar(1.5));
        let y = t.mul(c, x).unwrap();
        t.backward(y).unwrap();
        assert!(t.grad(c).is_none());
        assert_eq!(t.grad(x).unwrap().item(), 2.0);
    }

    #[test]
    fn complex_mul_matches_scalar_formula() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::row(vec![1.0, 2.0, 3.0, -1.0]));
        let b = t.constant(Tensor::row(vec![0.5, -1.0, 2.0, 4.0]));
        let (za, zb) = (split(&mut t, a).unwrap(), split(&mut t, b).unwrap());
        let p = mul(&mut t, za, zb).unwrap();
        let j = join(&mut t, p).unwrap();
        // (1+3i)(0.5+2i) = -5.5+3.5i ; (2-i)(-1+4i) = 2+9i
        assert_eq!(t.value(j).data(), &[-5.5, 2.0, 3.5, 9.0]);
    }
}
