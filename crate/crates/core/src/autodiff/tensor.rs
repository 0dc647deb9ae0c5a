use rand::Rng;

use crate::error::{Error, Result};

/// Dense row-major 2-D tensor of `f64`.
///
/// Recurrent computations only ever need `[batch, features]` blocks and
/// weight matrices, so the rank is fixed at two; a vector is `[1, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self::filled(1, 1, v)
    }

    pub fn row(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Entries uniform on `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Self {
        Self::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
    }

    /// One-hot rows: row `r` has a 1 in column `ids[r]`.
    pub fn one_hot(ids: &[usize], cols: usize) -> Self {
        let mut t = Self::zeros(ids.len(), cols);
        for (r, &id) in ids.iter().enumerate() {
            t.data[r * cols + id] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Single value of a `[1, 1]` tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.len(), 1);
        self.data[0]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Dot product with eight interleaved partial sums; the fixed grouping
/// keeps results reproducible while letting the loop vectorize.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn axpy(out: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// `out += a · b` with `a: [m, k]`, `b: [k, n]`, `out: [m, n]`.
fn mm(a: &[f64], b: &[f64], out: &mut [f64], k: usize, n: usize) {
    for (arow, orow) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, brow) in arow.iter().zip(b.chunks_exact(n)) {
            if av != 0.0 {
                axpy(orow, av, brow);
            }
        }
    }
}

/// `out = g · bᵀ` with `g: [m, n]`, `b: [k, n]`, `out: [m, k]`.
fn mm_nt(g: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize) {
    for (grow, orow) in g.chunks_exact(n).zip(out.chunks_exact_mut(k)) {
        for (o, brow) in orow.iter_mut().zip(b.chunks_exact(n)) {
            *o = dot(grow, brow);
        }
    }
}

/// `out += aᵀ · g` with `a: [m, k]`, `g: [m, n]`, `out: [k, n]`.
fn mm_tn(a: &[f64], g: &[f64], out: &mut [f64], k: usize, n: usize) {
    for (arow, grow) in a.chunks_exact(k).zip(g.chunks_exact(n)) {
        for (&av, orow) in arow.iter().zip(out.chunks_exact_mut(n)) {
            if av != 0.0 {
                axpy(orow, av, grow);
            }
        }
    }
}

/// `out += a · b`.
pub(crate) fn matmul_acc(a: &Tensor, b: &Tensor, out: &mut [f64]) {
    debug_assert_eq!(out.len(), a.rows * b.cols);
    mm(&a.data, &b.data, out, a.cols, b.cols);
}

/// `g · bᵀ`.
pub(crate) fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(g.rows, b.rows);
    mm_nt(&g.data, &b.data, &mut out.data, g.cols, b.rows);
    out
}

/// `out += aᵀ · g`.
pub(crate) fn matmul_tn_acc(a: &Tensor, g: &Tensor, out: &mut Tensor) {
    debug_assert_eq!(out.shape(), [a.cols, g.cols]);
    mm_tn(&a.data, &g.data, &mut out.data, a.cols, g.cols);
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn naive(a: &Tensor, b: &Tensor) -> Tensor {
        Tensor::from_fn(a.rows, b.cols, |i, j| (0..a.cols).map(|p| a.get(i, p) * b.get(p, j)).sum())
    }

    #[test]
    fn kernels_match_naive_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (m, k, n) in [(1, 1, 1), (3, 17, 5), (2, 64, 33), (1, 9, 130)] {
            let a = Tensor::uniform(m, k, 1.0, &mut rng);
            let b = Tensor::uniform(k, n, 1.0, &mut rng);
            let g = Tensor::uniform(m, n, 1.0, &mut rng);
            let close = |x: &Tensor, y: &Tensor| x.data.iter().zip(&y.data).all(|(p, q)| (p - q).abs() < 1e-12);

            let mut out = vec![0.0; m * n];
            matmul_acc(&a, &b, &mut out);
            assert!(close(&Tensor::new(m, n, out).unwrap(), &naive(&a, &b)));
            assert!(close(&matmul_nt(&g, &b), &naive(&g, &b.transpose())));
            let mut db = Tensor::filled(k, n, 0.5);
            matmul_tn_acc(&a, &g, &mut db);
            assert!(close(&db, &naive(&a.transpose(), &g).map(|v| v + 0.5)));
        }
    }
}
