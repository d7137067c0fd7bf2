//! Finite-difference validation of the analytic gradients.
//!
//! The objective's positive sets and consistency targets are pinned via
//! [`crate::objectives::capture_frozen`] before differencing, so the checked
//! function is smooth and matches the semantics under which the analytic
//! gradients are derived (selections constant, targets stop-gradient).

use crate::error::Result;
use crate::model::Model;
use crate::objectives::{capture_frozen, total_loss, total_loss_frozen, Batch};
use crate::scalar::Scalar;

/// Worst-case comparison between analytic and central-difference gradients.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck<T> {
    pub n_params: usize,
    pub max_rel_err: T,
    pub worst_index: usize,
    pub worst_analytic: T,
    pub worst_numeric: T,
}

/// Relative error with a unit floor: |a - b| / max(1, |a|, |b|).
fn rel_err<T: Scalar>(a: T, b: T) -> T {
    (a - b).abs() / T::one().max(a.abs()).max(b.abs())
}

/// Checks d(total)/d(parameter) for every parameter by central differences
/// of the frozen objective with the given step.
pub fn check_total_gradients<T: Scalar>(model: &Model<T>, batch: &Batch<T>, step: T) -> Result<GradCheck<T>> {
    let frozen = capture_frozen(model, batch)?;
    let (_, grads) = total_loss(model, batch)?;
    let analytic = grads.flatten();
    let base = model.flatten_params();
    let mut probe = model.clone();
    let mut params = base.clone();
    let two = T::from_f64_near(2.0);
    let mut report = GradCheck {
        n_params: base.len(),
        max_rel_err: T::zero(),
        worst_index: 0,
        worst_analytic: T::zero(),
        worst_numeric: T::zero(),
    };
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + step;
        probe.set_params(&params)?;
        let plus = total_loss_frozen(&probe, batch, &frozen)?.total;
        params[i] = orig - step;
        probe.set_params(&params)?;
        let minus = total_loss_frozen(&probe, batch, &frozen)?.total;
        params[i] = orig;
        let fd = (plus - minus) / (two * step);
        let err = rel_err(fd, analytic[i]);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_index = i;
            report.worst_analytic = analytic[i];
            report.worst_numeric = fd;
        }
    }
    Ok(report)
}
