use super::{ParamStore, Tape, Var};
use crate::error::{Error, Result};

/// Default central-difference step.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Compares tape gradients against central finite differences.
///
/// `f` builds the scalar loss on a fresh tape bound to the given store.
/// Returns the largest coordinate-wise relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check<F>(store: &ParamStore, eps: f64, f: F) -> Result<f64>
where
    F: Fn(&ParamStore) -> Result<(Tape, Var)>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::contract(format!("grad_check eps must be positive, got {eps}")));
    }
    let (tape, loss) = f(store)?;
    let base = tape.value(loss).to_scalar()?;
    if !base.is_finite() {
        return Err(Error::Numeric("loss is not finite at the base point".into()));
    }
    let analytic = tape.backward(loss)?;

    let eval = |s: &ParamStore| -> Result<f64> {
        let (t, l) = f(s)?;
        let v = t.value(l).to_scalar()?;
        if !v.is_finite() {
            return Err(Error::Numeric("loss is not finite at a perturbed point".into()));
        }
        Ok(v)
    };

    let mut probe = store.clone();
    let mut worst = 0.0_f64;
    for id in store.ids() {
        for k in 0..store.get(id).len() {
            let orig = store.get(id).as_slice()[k];
            probe.get_mut(id).as_mut_slice()[k] = orig + eps;
            let plus = eval(&probe)?;
            probe.get_mut(id).as_mut_slice()[k] = orig - eps;
            let minus = eval(&probe)?;
            probe.get_mut(id).as_mut_slice()[k] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let exact = analytic.param(id).as_slice()[k];
            let denom = exact.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((exact - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
