//! Central finite-difference verification of analytic gradients.

use crate::autodiff::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Denominator floor for the relative error, so that entries whose true
/// gradient is zero are judged on absolute error instead.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    pub passed: bool,
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Location of a non-finite loss encountered while probing.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeFailure {
    pub param: String,
    pub index: usize,
}

/// Compares `grad_fn`'s analytic gradient with central differences of
/// `loss_fn` for every entry of the listed parameters (all when `only` is
/// `None`).
///
/// The relative error of an entry is `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn finite_diff_check<L, G>(
    loss_fn: L,
    grad_fn: G,
    params: &ParamStore,
    only: Option<&[ParamId]>,
    step: f64,
    tolerance: f64,
) -> Result<FdReport>
where
    L: Fn(&ParamStore) -> Result<f64>,
    G: Fn(&ParamStore) -> Result<Gradients>,
{
    let analytic = grad_fn(params)?;
    let ids: Vec<ParamId> = match only {
        Some(ids) => ids.to_vec(),
        None => (0..params.len()).collect(),
    };

    let mut probe = params.clone();
    let mut report = FdReport {
        passed: true,
        max_rel_err: 0.0,
        worst: None,
        checked: 0,
    };
    for id in ids {
        for idx in 0..params.get(id).len() {
            let orig = params.get(id).data()[idx];
            probe.get_mut(id).data_mut()[idx] = orig + step;
            let up = loss_fn(&probe)?;
            probe.get_mut(id).data_mut()[idx] = orig - step;
            let down = loss_fn(&probe)?;
            probe.get_mut(id).data_mut()[idx] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite {
                    context: format!(
                        "finite-difference probe of `{}`[{idx}]",
                        params.name(id)
                    ),
                });
            }
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.get(id).data()[idx];
            let denom = a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_err || rel.is_nan() {
                report.max_rel_err = rel;
                report.worst = Some((params.name(id).to_string(), idx));
            }
        }
    }
    report.passed = report.max_rel_err <= tolerance;
    Ok(report)
}
