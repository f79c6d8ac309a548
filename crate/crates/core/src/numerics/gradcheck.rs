//! Finite-difference validation harness for analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::scalar::Scalar;

/// Named parameter tensors, the unit the checker perturbs.
pub type ParamVec<T> = Vec<(String, DenseMatrix<T>)>;

#[derive(Clone, Debug)]
pub struct GradCheckReport<T> {
    /// Max relative error per parameter tensor, in input order.
    pub per_param: Vec<(String, T)>,
    pub max_rel_err: T,
    pub pass: bool,
}

/// Compares analytic gradients against central finite differences
/// `(f(x+eps) - f(x-eps)) / 2 eps`, elementwise, with relative error
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// The loss is evaluated twice at the base point first; any difference
/// means the closure is not deterministic and the check is rejected.
pub fn finite_difference_check<T: Scalar>(
    loss_fn: &mut dyn FnMut(&ParamVec<T>) -> Result<T>,
    params: &ParamVec<T>,
    analytic: &[DenseMatrix<T>],
    perturbation: T,
    tolerance: T,
) -> Result<GradCheckReport<T>> {
    assert_eq!(params.len(), analytic.len());
    let base1 = loss_fn(params)?;
    let base2 = loss_fn(params)?;
    if base1 != base2 {
        return Err(Error::NonDeterministicLoss {
            first: base1.into_f64(),
            second: base2.into_f64(),
        });
    }

    let floor = T::from_f64_lossy(1e-8);
    let mut work = params.clone();
    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel_err = T::zero();
    for (pi, (name, _)) in params.iter().enumerate() {
        let mut worst = T::zero();
        for k in 0..params[pi].1.data().len() {
            let orig = work[pi].1.data()[k];
            work[pi].1.data_mut()[k] = orig + perturbation;
            let plus = loss_fn(&work)?;
            work[pi].1.data_mut()[k] = orig - perturbation;
            let minus = loss_fn(&work)?;
            work[pi].1.data_mut()[k] = orig;

            let numeric = (plus - minus) / (perturbation + perturbation);
            let a = analytic[pi].data()[k];
            let denom = a.abs().max(numeric.abs()).max(floor);
            let rel = (a - numeric).abs() / denom;
            worst = worst.max(rel);
        }
        per_param.push((name.clone(), worst));
        max_rel_err = max_rel_err.max(worst);
    }

    Ok(GradCheckReport {
        per_param,
        max_rel_err,
        pass: max_rel_err < tolerance,
    })
}
