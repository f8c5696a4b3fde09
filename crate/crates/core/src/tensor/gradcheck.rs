//! Finite-difference verification of the analytic gradients.

use super::{ParamSet, Result, Tensor};
use crate::scalar::Scalar;

/// Compares `backward` gradients of `f` against central differences
/// `(f(p+h) − f(p−h)) / 2h` for every element of every parameter and
/// returns the largest relative error, with denominator
/// `max(|analytic|, |numeric|, 1e-8)`.
///
/// `f` must be a deterministic function of the parameter set.
pub fn grad_check<T, F>(f: F, params: &ParamSet<T>, step: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&ParamSet<T>) -> Result<Tensor<T>>,
{
    let loss = f(params)?;
    let grads = loss.backward()?;
    let two = T::from_config(2.0);
    let floor = T::from_config(1e-8);
    let mut max_rel = T::zero();

    for (name, p) in params.iter() {
        let analytic = grads.grad_or_zero(p);
        let base = p.data();
        for i in 0..base.len() {
            let mut plus = base.to_vec();
            plus[i] = plus[i] + step;
            let f_plus = f(&params.with_replaced(name, plus)?)?.item()?;

            let mut minus = base.to_vec();
            minus[i] = minus[i] - step;
            let f_minus = f(&params.with_replaced(name, minus)?)?.item()?;

            let numeric = (f_plus - f_minus) / (two * step);
            let denom = analytic[i].abs().max(numeric.abs()).max(floor);
            let rel = (analytic[i] - numeric).abs() / denom;
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}
