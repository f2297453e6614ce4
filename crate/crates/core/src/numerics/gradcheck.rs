//! Central finite-difference checking.
//!
//! The numerical side only evaluates forward values, so it stays independent
//! of the adjoint rules it is used to check.

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Worst `|analytic - numeric| / max(|analytic|, |numeric|)` among
    /// coordinates that fail the absolute tolerance.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub failures: usize,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences with step `h`. A coordinate passes when its absolute error is
/// below `abs_tol` or its relative error is below `rel_tol`.
pub fn check<F>(inputs: &[Tensor], h: f64, rel_tol: f64, abs_tol: f64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs = perturbed.iter().map(|x| t.constant(x)).collect::<Result<Vec<_>>>()?;
        let o = f(&mut t, &vs)?;
        Ok(t.scalar(o))
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        failures: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).unwrap_or_default();
        for j in 0..inputs[k].len() {
            let orig = inputs[k].data()[j];
            work[k].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[k].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[k].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let abs = (analytic[j] - numeric).abs();
            let rel = abs / analytic[j].abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if abs > abs_tol {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel > rel_tol {
                    report.failures += 1;
                }
            }
        }
    }
    Ok(report)
}

/// Finite-difference check of gradients already accumulated into the store
/// returned by `store_of(model)`.
///
/// `f` evaluates the scalar objective for a (perturbed) copy of the model.
/// At most `per_tensor` coordinates of each parameter tensor are probed,
/// chosen by a deterministic stride.
pub fn check_model<M, S, F>(
    model: &M,
    store_of: S,
    f: F,
    per_tensor: usize,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<GradCheck>
where
    M: Clone,
    S: Fn(&mut M) -> &mut crate::params::ParamStore,
    F: Fn(&M) -> Result<f64>,
{
    let mut work = model.clone();
    let analytic: Vec<Vec<f64>> = store_of(&mut work)
        .tensors_mut()
        .map(|t| t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        failures: 0,
    };
    for (ti, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let stride = (n / per_tensor.max(1)).max(1);
        for j in (0..n).step_by(stride).take(per_tensor) {
            let orig = nth_tensor(store_of(&mut work), ti).data()[j];
            nth_tensor(store_of(&mut work), ti).data_mut()[j] = orig + h;
            let up = f(&work)?;
            nth_tensor(store_of(&mut work), ti).data_mut()[j] = orig - h;
            let down = f(&work)?;
            nth_tensor(store_of(&mut work), ti).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let abs = (grads[j] - numeric).abs();
            let rel = abs / grads[j].abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max(abs);
            if abs > abs_tol {
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel > rel_tol {
                    report.failures += 1;
                }
            }
        }
    }
    Ok(report)
}

fn nth_tensor(store: &mut crate::params::ParamStore, i: usize) -> &mut Tensor {
    store.tensors_mut().nth(i).expect("tensor index in range")
}
