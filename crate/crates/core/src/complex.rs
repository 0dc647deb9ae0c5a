//! Complex vectors in split-halves layout.
//!
//! A vector of `N_h` reals holds `N_h / 2` complex numbers: the first half
//! are the real parts, the second half the imaginary parts. Binding is
//! element-wise complex multiplication, so moduli multiply and phases add.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Stacked `[re; im]` complex vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexVec {
    data: Vec<f64>,
}

impl ComplexVec {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() < 2 || data.len() % 2 != 0 {
            return Err(Error::OddLength(data.len()));
        }
        Ok(Self { data })
    }

    pub fn from_parts(re: &[f64], im: &[f64]) -> Result<Self> {
        if re.len() != im.len() {
            return Err(Error::LengthMismatch {
                expected: re.len(),
                got: im.len(),
            });
        }
        let mut data = Vec::with_capacity(re.len() * 2);
        data.extend_from_slice(re);
        data.extend_from_slice(im);
        Self::new(data)
    }

    /// Builds a vector from per-element polar coordinates.
    pub fn from_polar(moduli: &[f64], phases: &[f64]) -> Result<Self> {
        if moduli.len() != phases.len() {
            return Err(Error::LengthMismatch {
                expected: moduli.len(),
                got: phases.len(),
            });
        }
        let re: Vec<f64> = moduli
            .iter()
            .zip(phases)
            .map(|(a, p)| a * p.cos())
            .collect();
        let im: Vec<f64> = moduli
            .iter()
            .zip(phases)
            .map(|(a, p)| a * p.sin())
            .collect();
        Self::from_parts(&re, &im)
    }

    /// `n` complex zeros (`2n` reals).
    pub fn zeros(n: usize) -> Self {
        Self {
            data: vec![0.0; 2 * n.max(1)],
        }
    }

    /// `n` copies of `1 + 0i`.
    pub fn ones(n: usize) -> Self {
        let n = n.max(1);
        let mut data = vec![0.0; 2 * n];
        data[..n].fill(1.0);
        Self { data }
    }

    /// Unit-modulus vector with phases uniform on `[0, 2π)`.
    pub fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let phases: Vec<f64> = (0..n.max(1)).map(|_| rng.random::<f64>() * TAU).collect();
        let re: Vec<f64> = phases.iter().map(|p| p.cos()).collect();
        let im: Vec<f64> = phases.iter().map(|p| p.sin()).collect();
        let mut data = re;
        data.extend(im);
        Self { data }
    }

    /// Number of reals, `N_h`.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of complex elements, `N_h / 2`.
    pub fn n_complex(&self) -> usize {
        self.data.len() / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn re(&self) -> &[f64] {
        &self.data[..self.n_complex()]
    }

    pub fn im(&self) -> &[f64] {
        &self.data[self.n_complex()..]
    }

    /// `(re, im)` of element `k`.
    pub fn get(&self, k: usize) -> (f64, f64) {
        let n = self.n_complex();
        (self.data[k], self.data[n + k])
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    /// Element-wise complex product `self ⊛ x`.
    pub fn bind(&self, x: &Self) -> Result<Self> {
        self.check_len(x)?;
        let n = self.n_complex();
        let (rr, ri) = self.data.split_at(n);
        let (xr, xi) = x.data.split_at(n);
        let mut data = vec![0.0; 2 * n];
        for k in 0..n {
            data[k] = rr[k] * xr[k] - ri[k] * xi[k];
            data[n + k] = rr[k] * xi[k] + ri[k] * xr[k];
        }
        Ok(Self { data })
    }

    pub fn conjugate(&self) -> Self {
        let n = self.n_complex();
        let mut data = self.data.clone();
        for v in &mut data[n..] {
            *v = -*v;
        }
        Self { data }
    }

    /// Per-element modulus inverted, phase negated: `conj(z) / |z|²`.
    pub fn key_inverse(&self) -> Result<Self> {
        let n = self.n_complex();
        let mut data = vec![0.0; 2 * n];
        for k in 0..n {
            let (re, im) = self.get(k);
            let m2 = re * re + im * im;
            if m2 == 0.0 {
                return Err(Error::SingularKey { index: k });
            }
            data[k] = re / m2;
            data[n + k] = -im / m2;
        }
        Ok(Self { data })
    }

    /// Divides each element by `max(1, |z|)`, capping moduli at one.
    pub fn bound(&self) -> Self {
        let n = self.n_complex();
        let mut data = self.data.clone();
        for k in 0..n {
            let d = self.data[k].hypot(self.data[n + k]).max(1.0);
            data[k] /= d;
            data[n + k] /= d;
        }
        Self { data }
    }

    pub fn modulus(&self) -> Vec<f64> {
        let n = self.n_complex();
        (0..n).map(|k| self.data[k].hypot(self.data[n + k])).collect()
    }

    /// Applies `p` identically to both halves.
    pub fn permute(&self, p: &Permutation) -> Result<Self> {
        let n = self.n_complex();
        if p.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: p.len(),
            });
        }
        let mut data = vec![0.0; 2 * n];
        for (j, &src) in p.map.iter().enumerate() {
            data[j] = self.data[src];
            data[n + j] = self.data[n + src];
        }
        Ok(Self { data })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(Self {
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Mean squared error per real element.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.check_len(other)?;
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(sum / self.len() as f64)
    }
}

/// Bijection on complex indices `0..n`, applied as a gather:
/// `out[j] = in[map[j]]`.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Permutation {
    map: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self {
            map: (0..n).collect(),
        }
    }

    /// Uniform random permutation (Fisher–Yates).
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let mut map: Vec<usize> = (0..n).collect();
        map.shuffle(rng);
        Self { map }
    }

    pub fn from_map(map: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; map.len()];
        for &m in &map {
            if m >= map.len() {
                return Err(Error::InvalidPermutation(format!(
                    "index {m} out of range for size {}",
                    map.len()
                )));
            }
            if std::mem::replace(&mut seen[m], true) {
                return Err(Error::InvalidPermutation(format!("index {m} repeated")));
            }
        }
        Ok(Self { map })
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.map.len()];
        for (j, &m) in self.map.iter().enumerate() {
            inv[m] = j;
        }
        Self { map: inv }
    }

    pub fn is_identity(&self) -> bool {
        self.map.iter().enumerate().all(|(j, &m)| j == m)
    }

    /// Gather a plain real slice.
    pub fn apply_real(&self, v: &[f64]) -> Vec<f64> {
        self.map.iter().map(|&m| v[m]).collect()
    }
}

impl TryFrom<Vec<usize>> for Permutation {
    type Error = Error;

    fn try_from(map: Vec<usize>) -> Result<Self> {
        Self::from_map(map)
    }
}

impl From<Permutation> for Vec<usize> {
    fn from(p: Permutation) -> Self {
        p.map
    }
}
