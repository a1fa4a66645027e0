//! Finite-difference verification of reverse-mode gradients.

use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, entry index) of the worst disagreement.
    pub worst: (usize, usize),
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients against central finite differences.
///
/// `loss_fn` must rebuild the graph on every call and be deterministic:
/// same parameters in, same scalar out. For every entry of every
/// parameter the analytic gradient is compared with
/// `(L(θ+h) − L(θ−h)) / 2h` under the relative error
/// `|a − n| / max(|a|, |n|, 1e-8)`; the worst entry is reported.
pub fn grad_check(
    mut loss_fn: impl FnMut() -> Result<Tensor>,
    params: &[Tensor],
    h: f64,
) -> Result<GradCheckReport> {
    for p in params {
        p.zero_grad();
    }
    let loss = loss_fn()?;
    if !loss.item().is_finite() {
        return Err(Error::NonFinite("grad_check loss".into()));
    }
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = params.iter().map(|p| p.grad_vec()).collect();

    let mut max_rel = 0.0;
    let mut worst = (0, 0);
    let mut entries = 0;
    for (pi, p) in params.iter().enumerate() {
        for ei in 0..p.len() {
            let orig = p.with_values_mut(|v| {
                let o = v[ei];
                v[ei] = o + h;
                o
            });
            let plus = loss_fn()?.item();
            p.with_values_mut(|v| v[ei] = orig - h);
            let minus = loss_fn()?.item();
            p.with_values_mut(|v| v[ei] = orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check perturbation of parameter {pi} entry {ei}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi][ei];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
                worst = (pi, ei);
            }
            entries += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        entries_checked: entries,
    })
}
