//! Central finite-difference gradient checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub tensor: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub pass: bool,
    /// Entries whose relative error exceeded `tol`.
    pub failures: Vec<Mismatch>,
}

/// Relative error with a floor so that entries near zero do not dominate.
/// The floor is 1e-3 of the largest gradient magnitude in the same tensor
/// (`full` is the whole analytic gradient, checked entries may be a sample),
/// and at least 1e-6 of the largest gradient over all inputs (`global`).
fn rel_errors(full: &[f64], analytic: &[f64], numeric: &[f64], global: f64) -> Vec<f64> {
    let scale = full
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-6 * global).max(1e-10);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .collect()
}

/// Compares the tape gradient of scalar `f` at `x` against central
/// differences with step `eps`, on every element of `x`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64, tol: f64) -> Result<GradReport>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    grad_check_many(|xs| f(&xs[0]), &[x.clone()], eps, tol, None, 0)
}

/// Gradient check over several inputs at once. When `sample_per_tensor` is
/// set, only that many randomly chosen entries of each input are perturbed
/// (seeded by `seed`); the analytic gradient is still computed in full.
pub fn grad_check_many<F>(
    f: F,
    xs: &[Tensor],
    eps: f64,
    tol: f64,
    sample_per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    check(f, xs, eps, tol, sample_per_tensor, seed, false)
}

/// As [`grad_check_many`] but with the five-point difference
/// (−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h. Its truncation error is
/// O(h⁴), so a larger `eps` can be used on deep compositions where the
/// three-point quotient at small steps is dominated by round-off.
pub fn grad_check_high_order<F>(
    f: F,
    xs: &[Tensor],
    eps: f64,
    tol: f64,
    sample_per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    check(f, xs, eps, tol, sample_per_tensor, seed, true)
}

fn check<F>(
    f: F,
    xs: &[Tensor],
    eps: f64,
    tol: f64,
    sample_per_tensor: Option<usize>,
    seed: u64,
    five_point: bool,
) -> Result<GradReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    if eps <= 0.0 {
        return Err(Error::invalid("grad_check eps must be positive"));
    }
    let tape = Tape::new();
    let leaves: Vec<Tensor> = xs.iter().map(|x| tape.leaf(x)).collect();
    let root = f(&leaves)?;
    if root.numel() != 1 {
        return Err(Error::NonScalarRoot(root.shape().to_vec()));
    }
    // A root that does not depend on any input has zero gradient everywhere.
    let grads = if root.is_attached() {
        Some(root.backward()?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradReport {
        checked: 0,
        max_rel_err: 0.0,
        tol,
        pass: true,
        failures: Vec::new(),
    };
    let base: Vec<Tensor> = xs.iter().map(Tensor::detach).collect();
    let global = match &grads {
        Some(g) => leaves.iter().map(|l| g.get_or_zeros(l).max_abs()).fold(0.0, f64::max),
        None => 0.0,
    };
    for (t, x) in xs.iter().enumerate() {
        let analytic = match &grads {
            Some(g) => g.get_or_zeros(&leaves[t]).to_vec(),
            None => vec![0.0; x.numel()],
        };
        let indices: Vec<usize> = match sample_per_tensor {
            Some(k) if k < x.numel() => {
                let mut v = sample(&mut rng, x.numel(), k).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..x.numel()).collect(),
        };
        let mut numeric = Vec::with_capacity(indices.len());
        let mut args = base.clone();
        for &i in &indices {
            let mut at = |h: f64| -> Result<f64> {
                let mut moved = x.to_vec();
                moved[i] += h;
                args[t] = Tensor::new(x.shape().to_vec(), moved)?;
                Ok(f(&args)?.item())
            };
            let d = if five_point {
                (-at(2.0 * eps)? + 8.0 * at(eps)? - 8.0 * at(-eps)? + at(-2.0 * eps)?) / (12.0 * eps)
            } else {
                (at(eps)? - at(-eps)?) / (2.0 * eps)
            };
            numeric.push(d);
        }
        args[t] = base[t].clone();
        let a_sel: Vec<f64> = indices.iter().map(|&i| analytic[i]).collect();
        for (k, rel) in rel_errors(&analytic, &a_sel, &numeric, global).into_iter().enumerate() {
            report.checked += 1;
            report.max_rel_err = report.max_rel_err.max(rel);
            if !(rel < tol) {
                report.pass = false;
                report.failures.push(Mismatch {
                    tensor: t,
                    index: indices[k],
                    analytic: a_sel[k],
                    numeric: numeric[k],
                    rel_err: rel,
                });
            }
        }
    }
    Ok(report)
}
