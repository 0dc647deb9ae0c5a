use rand::seq::index::sample;
use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so gradients that are
/// essentially zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-4;

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinates compared (kinks excluded).
    pub checked: usize,
    /// `(param, element)` coordinates where the one-sided differences
    /// disagree, i.e. the function is not differentiable inside `±eps`.
    pub kinks: Vec<(usize, usize)>,
    /// Coordinate with the largest error.
    pub worst: Option<(usize, usize)>,
}

fn eval<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.value(out).item())
}

/// Compares tape gradients of the scalar `f` against central differences.
///
/// With `max_coords = Some((k, rng))` only `k` randomly chosen coordinates
/// are perturbed.
pub fn grad_check<F, R>(
    f: F,
    params: &[Tensor],
    eps: f64,
    max_coords: Option<(usize, &mut R)>,
) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    if eps <= 0.0 {
        return Err(Error::Config("grad_check needs eps > 0".into()));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let f0 = tape.value(out).item();

    let all: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |e| (p, e)))
        .collect();
    let coords: Vec<(usize, usize)> = match max_coords {
        Some((k, rng)) if k < all.len() => sample(rng, all.len(), k)
            .into_iter()
            .map(|i| all[i])
            .collect(),
        _ => all,
    };

    let mut report = GradCheck::default();
    let mut work: Vec<Tensor> = params.to_vec();
    for (p, e) in coords {
        let analytic = tape.grad(vars[p]).map_or(0.0, |g| g.data()[e]);
        let x = params[p].data()[e];
        work[p].data_mut()[e] = x + eps;
        let fp = eval(&f, &work)?;
        work[p].data_mut()[e] = x - eps;
        let fm = eval(&f, &work)?;
        work[p].data_mut()[e] = x;

        let fwd = (fp - f0) / eps;
        let bwd = (f0 - fm) / eps;
        if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()).max(1e-3) {
            report.kinks.push((p, e));
            continue;
        }
        let numeric = (fp - fm) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        report.checked += 1;
        if report.worst.is_none() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = Some((p, e));
        }
    }
    Ok(report)
}
