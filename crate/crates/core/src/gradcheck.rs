//! Finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rayon::prelude::*;

/// Per-tensor worst relative error of analytic vs central-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub per_tensor: Vec<(String, f64)>,
}

// The denominator floor sits above central-difference roundoff noise
// (|f|·ulp / 2ε ≈ 1e-10 for losses of order 10) so near-zero gradient
// entries are not flagged by FD noise alone.
fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs()).max(1e-6);
    (a - n).abs() / denom
}

/// Compares the analytic gradient returned by `f` at the given point with
/// `(f(p+ε) − f(p−ε)) / 2ε` for every entry of every input tensor.
///
/// `f` evaluates the scalar function and its full analytic gradient; only
/// the scalar part is used for the perturbed evaluations. Entries are
/// checked in parallel, each on its own cloned copy of the inputs.
pub fn grad_check<F>(f: &F, inputs: &[(String, Tensor)], eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)> + Sync,
{
    if eps <= 0.0 {
        return Err(Error::Parameter("grad_check: eps must be positive".into()));
    }
    let values: Vec<Tensor> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let (center, analytic) = f(&values)?;
    if !center.is_finite() {
        return Err(Error::Numerical("grad_check: non-finite function value".into()));
    }
    if analytic.len() != inputs.len() {
        return Err(Error::Dimension(format!(
            "grad_check: {} gradients for {} inputs",
            analytic.len(),
            inputs.len()
        )));
    }

    let mut entries = Vec::new();
    for (i, t) in values.iter().enumerate() {
        for j in 0..t.numel() {
            entries.push((i, j));
        }
    }

    let per_entry: Vec<Result<(usize, f64)>> = entries
        .par_iter()
        .map(|&(i, j)| {
            let mut plus = values.to_vec();
            plus[i].data_mut()[j] += eps;
            let (fp, _) = f(&plus)?;
            let mut minus = values.to_vec();
            minus[i].data_mut()[j] -= eps;
            let (fm, _) = f(&minus)?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::Numerical(
                    "grad_check: non-finite perturbed value".into(),
                ));
            }
            let numeric = (fp - fm) / (2.0 * eps);
            Ok((i, rel_err(analytic[i].data()[j], numeric)))
        })
        .collect();

    let mut per_tensor: Vec<(String, f64)> =
        inputs.iter().map(|(n, _)| (n.clone(), 0.0)).collect();
    for r in per_entry {
        let (i, e) = r?;
        if e > per_tensor[i].1 {
            per_tensor[i].1 = e;
        }
    }
    let max_rel_err = per_tensor.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err,
        per_tensor,
    })
}

/// Convenience wrapper for tests working with unnamed inputs and an
/// infallible function.
pub fn central_diff_max_rel_err<F>(f: &F, inputs: &[Tensor], eps: f64) -> f64
where
    F: Fn(&[Tensor]) -> (f64, Vec<Tensor>) + Sync,
{
    let named: Vec<(String, Tensor)> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("input{}", i), t.clone()))
        .collect();
    let wrapped = |vals: &[Tensor]| Ok(f(vals));
    grad_check(&wrapped, &named, eps)
        .expect("grad check evaluation failed")
        .max_rel_err
}
