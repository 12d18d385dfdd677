use crate::error::Result;
use crate::numerics::params::ParamStore;
use crate::numerics::tape::{Tape, Var};
use crate::scalar::Scalar;

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coordinates: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares tape gradients of `f` against central differences
/// `(f(p + eps) - f(p - eps)) / (2 eps)` for every coordinate of every parameter.
///
/// `f` must be deterministic. Gradients in `store` are overwritten.
pub fn grad_check<S, F>(store: &mut ParamStore<S>, eps: f64, f: F) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&Tape<S>, &ParamStore<S>) -> Result<Var>,
{
    store.zero_grad();
    let tape = Tape::new();
    let loss = f(&tape, store)?;
    tape.backward_into(loss, store)?;

    let eval = |store: &ParamStore<S>| -> Result<f64> {
        let tape = Tape::new();
        let loss = f(&tape, store)?;
        Ok(tape.scalar(loss).as_f64())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coordinates: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for k in 0..store.value(id).len() {
            let original = store.value(id).data()[k];
            let analytic = store.grad(id).data()[k].as_f64();

            store.get_mut(id).value.data_mut()[k] = S::of(original.as_f64() + eps);
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = S::of(original.as_f64() - eps);
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic, numeric);
            report.coordinates += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err;
                report.worst = Some((store.get(id).name.clone(), k));
            }
        }
    }
    Ok(report)
}
