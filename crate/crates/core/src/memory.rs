//! Redundant holographic associative memory.
//!
//! Each of the `N_copies` traces stores every key-value pair under its own
//! fixed permutation of the key. Retrieval unbinds every copy with the
//! conjugate of its permuted key and averages, which decorrelates the
//! cross-talk between stored items: the noise variance scales like
//! `N_items / N_copies`.
//!
//! Copy 0 always uses the identity permutation, so a single-copy memory is
//! the plain (un-permuted) holographic trace.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::complex::{ComplexVec, Permutation};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryTrace {
    n_h: usize,
    /// `n_copies` rows of `n_h` reals, each row split `[re; im]`.
    copies: Vec<f64>,
    perms: Vec<Permutation>,
    n_items: usize,
}

impl MemoryTrace {
    /// Empty trace with copy 0 un-permuted and the rest random.
    pub fn new<R: Rng + ?Sized>(n_h: usize, n_copies: usize, rng: &mut R) -> Result<Self> {
        check_width(n_h)?;
        if n_copies == 0 {
            return Err(Error::Config("n_copies must be >= 1".into()));
        }
        let n = n_h / 2;
        let perms = (0..n_copies)
            .map(|s| {
                if s == 0 {
                    Permutation::identity(n)
                } else {
                    Permutation::random(n, rng)
                }
            })
            .collect();
        Self::with_permutations(n_h, perms)
    }

    pub fn with_permutations(n_h: usize, perms: Vec<Permutation>) -> Result<Self> {
        check_width(n_h)?;
        if perms.is_empty() {
            return Err(Error::Config("n_copies must be >= 1".into()));
        }
        if let Some(p) = perms.iter().find(|p| p.len() != n_h / 2) {
            return Err(Error::LengthMismatch {
                expected: n_h / 2,
                got: p.len(),
            });
        }
        Ok(Self {
            n_h,
            copies: vec![0.0; n_h * perms.len()],
            perms,
            n_items: 0,
        })
    }

    pub fn width(&self) -> usize {
        self.n_h
    }

    pub fn n_copies(&self) -> usize {
        self.perms.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn permutations(&self) -> &[Permutation] {
        &self.perms
    }

    /// Row `s` of the trace as a complex vector.
    pub fn copy(&self, s: usize) -> ComplexVec {
        ComplexVec::new(self.copies[s * self.n_h..(s + 1) * self.n_h].to_vec())
            .expect("trace rows have valid width")
    }

    fn check(&self, v: &ComplexVec) -> Result<()> {
        if v.len() != self.n_h {
            return Err(Error::LengthMismatch {
                expected: self.n_h,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// Adds `(P_s key) ⊛ value` to every copy.
    pub fn store(&mut self, key: &ComplexVec, value: &ComplexVec) -> Result<()> {
        self.check(key)?;
        self.check(value)?;
        let n = self.n_h / 2;
        let (kr, ki) = key.as_slice().split_at(n);
        let (xr, xi) = value.as_slice().split_at(n);
        for (row, perm) in self.copies.chunks_exact_mut(self.n_h).zip(&self.perms) {
            let (cr, ci) = row.split_at_mut(n);
            for (j, &m) in perm.map().iter().enumerate() {
                let (a, b) = (kr[m], ki[m]);
                cr[j] += a * xr[j] - b * xi[j];
                ci[j] += a * xi[j] + b * xr[j];
            }
        }
        self.n_items += 1;
        Ok(())
    }

    /// Average over copies of `conj(P_s key) ⊛ c_s`.
    pub fn retrieve(&self, key: &ComplexVec) -> Result<ComplexVec> {
        self.check(key)?;
        Ok(self.unbind_average(key.as_slice()))
    }

    fn unbind_average(&self, key: &[f64]) -> ComplexVec {
        let n = self.n_h / 2;
        let (kr, ki) = key.split_at(n);
        let mut out = vec![0.0; self.n_h];
        {
            let (or, oi) = out.split_at_mut(n);
            for (row, perm) in self.copies.chunks_exact(self.n_h).zip(&self.perms) {
                let (cr, ci) = row.split_at(n);
                for (j, &m) in perm.map().iter().enumerate() {
                    // conj(a + bi) * (c + di)
                    let (a, b) = (kr[m], ki[m]);
                    or[j] += a * cr[j] + b * ci[j];
                    oi[j] += a * ci[j] - b * cr[j];
                }
            }
        }
        let inv = 1.0 / self.n_copies() as f64;
        for v in &mut out {
            *v *= inv;
        }
        ComplexVec::new(out).expect("valid width")
    }

    /// Retrieval with unknown key elements zeroed before permutation.
    ///
    /// `known[k]` marks complex element `k` of the key as known.
    pub fn partial_key_query(&self, key: &ComplexVec, known: &[bool]) -> Result<ComplexVec> {
        self.check(key)?;
        let n = self.n_h / 2;
        if known.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                got: known.len(),
            });
        }
        if !known.iter().any(|&k| k) {
            return Err(Error::DegenerateQuery);
        }
        let mut masked = key.as_slice().to_vec();
        for (k, &on) in known.iter().enumerate() {
            if !on {
                masked[k] = 0.0;
                masked[n + k] = 0.0;
            }
        }
        Ok(self.unbind_average(&masked))
    }

    /// Element-wise sum of two traces sharing the same permutations.
    pub fn merged(&self, other: &MemoryTrace) -> Result<MemoryTrace> {
        if self.n_h != other.n_h || self.perms != other.perms {
            return Err(Error::Config(
                "traces must share width and permutations to merge".into(),
            ));
        }
        Ok(MemoryTrace {
            n_h: self.n_h,
            copies: self
                .copies
                .iter()
                .zip(&other.copies)
                .map(|(a, b)| a + b)
                .collect(),
            perms: self.perms.clone(),
            n_items: self.n_items + other.n_items,
        })
    }
}

fn check_width(n_h: usize) -> Result<()> {
    if n_h < 2 || n_h % 2 != 0 {
        return Err(Error::OddLength(n_h));
    }
    Ok(())
}

/// Standard-normal value vector of `n_h` reals.
pub fn random_value<R: Rng + ?Sized>(n_h: usize, rng: &mut R) -> ComplexVec {
    let data: Vec<f64> = (0..n_h).map(|_| rng.sample(StandardNormal)).collect();
    ComplexVec::new(data).expect("caller passes an even width")
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub items: Vec<usize>,
    pub copies: Vec<usize>,
    /// Sweep items and copies together (`items[i]` with `copies[i]`)
    /// instead of over their cartesian product.
    pub paired: bool,
    pub n_h: usize,
    pub n_trials: usize,
    pub seed: u64,
}

impl SweepSpec {
    /// `(n_items, n_copies)` cells in output order, items-major.
    pub fn cells(&self) -> Result<Vec<(usize, usize)>> {
        if self.items.is_empty() || self.copies.is_empty() {
            return Err(Error::Config("sweep ranges must be nonempty".into()));
        }
        if self.n_trials == 0 {
            return Err(Error::Config("n_trials must be >= 1".into()));
        }
        check_width(self.n_h)?;
        if self.items.contains(&0) || self.copies.contains(&0) {
            return Err(Error::Config("items and copies must be >= 1".into()));
        }
        if self.paired {
            if self.items.len() != self.copies.len() {
                return Err(Error::Config(format!(
                    "paired sweep needs equal-length ranges ({} items vs {} copies)",
                    self.items.len(),
                    self.copies.len()
                )));
            }
            Ok(self.items.iter().copied().zip(self.copies.iter().copied()).collect())
        } else {
            Ok(self
                .items
                .iter()
                .flat_map(|&i| self.copies.iter().map(move |&c| (i, c)))
                .collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CapacityReport {
    pub n_items: usize,
    pub n_copies: usize,
    pub mse_per_element: f64,
    pub n_trials: usize,
    pub seed: u64,
}

/// Squared-error sum over all retrieved items for one trial.
fn capacity_trial(n_items: usize, n_copies: usize, n_h: usize, seed: u64, stream: u64) -> f64 {
    let mut rng = stream_rng(seed, stream);
    let mut trace = MemoryTrace::new(n_h, n_copies, &mut rng).expect("validated width");
    let pairs: Vec<(ComplexVec, ComplexVec)> = (0..n_items)
        .map(|_| {
            let key = ComplexVec::random_unit(n_h / 2, &mut rng);
            let value = random_value(n_h, &mut rng);
            (key, value)
        })
        .collect();
    for (k, v) in &pairs {
        trace.store(k, v).expect("validated width");
    }
    pairs
        .iter()
        .map(|(k, v)| {
            let got = trace.retrieve(k).expect("validated width");
            got.as_slice()
                .iter()
                .zip(v.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        })
        .sum()
}

/// Mean squared retrieval error per real element for each sweep cell.
///
/// Every `(cell, trial)` pair draws from its own PRNG stream, so results do
/// not depend on the rayon schedule.
pub fn capacity_sweep(spec: &SweepSpec) -> Result<Vec<CapacityReport>> {
    let cells = spec.cells()?;
    let trials = spec.n_trials as u64;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let sums: Vec<f64> = jobs
        .par_iter()
        .map(|&(c, t)| {
            let (items, copies) = cells[c];
            capacity_trial(items, copies, spec.n_h, spec.seed, c as u64 * trials + t)
        })
        .collect();
    Ok(cells
        .iter()
        .enumerate()
        .map(|(c, &(items, copies))| {
            let total: f64 = sums[c * spec.n_trials..(c + 1) * spec.n_trials].iter().sum();
            CapacityReport {
                n_items: items,
                n_copies: copies,
                mse_per_element: total / (items * spec.n_h * spec.n_trials) as f64,
                n_trials: spec.n_trials,
                seed: spec.seed,
            }
        })
        .collect())
}

pub const CAPACITY_CSV_HEADER: &str = "n_items,n_copies,mse,n_trials,seed";

pub fn write_capacity_csv<W: Write>(reports: &[CapacityReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CAPACITY_CSV_HEADER}")?;
    for r in reports {
        writeln!(
            w,
            "{},{},{:e},{},{}",
            r.n_items, r.n_copies, r.mse_per_element, r.n_trials, r.seed
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Roundtrip {
    pub original: Vec<f64>,
    pub reconstruction: Vec<f64>,
    /// Per real element, before any quantization.
    pub mse: f64,
}

impl Roundtrip {
    /// Reconstruction clamped to `[0, 1]` and quantized to bytes.
    pub fn reconstruction_bytes(&self) -> Vec<u8> {
        self.reconstruction
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

/// Stores `items` under random unit keys and retrieves item 0.
pub fn image_roundtrip(items: &[Vec<f64>], n_copies: usize, seed: u64) -> Result<Roundtrip> {
    let first = items
        .first()
        .ok_or_else(|| Error::Config("image roundtrip needs at least one item".into()))?;
    let n_h = first.len();
    check_width(n_h)?;
    let mut rng = stream_rng(seed, 0);
    let mut trace = MemoryTrace::new(n_h, n_copies, &mut rng)?;
    let mut first_key = None;
    for item in items {
        let value = ComplexVec::new(item.clone())?;
        let key = ComplexVec::random_unit(n_h / 2, &mut rng);
        trace.store(&key, &value)?;
        first_key.get_or_insert(key);
    }
    let got = trace.retrieve(first_key.as_ref().expect("nonempty"))?;
    let original = ComplexVec::new(first.clone())?;
    let mse = got.mse(&original)?;
    Ok(Roundtrip {
        original: first.clone(),
        reconstruction: got.into_vec(),
        mse,
    })
}

/// Splits a raw row-major byte file into frames of `width*height*channels`
/// values mapped to `[0, 1]`.
pub fn load_raw_frames(
    path: &Path,
    width: usize,
    height: usize,
    channels: usize,
) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame = width * height * channels;
    if frame == 0 || frame % 2 != 0 {
        return Err(Error::OddLength(frame));
    }
    if bytes.len() < frame || bytes.len() % frame != 0 {
        return Err(Error::Config(format!(
            "{} holds {} bytes, not a multiple of the {frame}-byte frame",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(frame)
        .map(|c| c.iter().map(|&b| b as f64 / 255.0).collect())
        .collect())
}

/// Uniform `[0, 1]` stand-ins for images.
pub fn synthetic_frames<R: Rng + ?Sized>(n: usize, len: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..len).map(|_| rng.random::<f64>()).collect())
        .collect()
}
