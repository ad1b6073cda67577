//! Central finite-difference check against the reverse pass.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Path and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares `(f(p+eps) - f(p-eps)) / 2eps` with the analytic gradient for every
/// trainable coordinate of `params`. The relative error of a coordinate uses
/// `max(|analytic|, |numeric|, 1e-8)` as denominator.
///
/// `f` builds the loss on a fresh graph from the given store.
pub fn finite_difference_check<T, F>(
    f: F,
    params: &ParamStore<T>,
    eps: f64,
) -> Result<GradCheckReport>
where
    T: Real,
    F: for<'a> Fn(&'a ParamStore<T>, &mut Graph<'a, T>) -> Result<Var>,
{
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {eps}")));
    }
    let analytic = {
        let mut g = Graph::new();
        let loss = f(params, &mut g)?;
        let mut grads = g.backward(loss)?;
        grads.fill_missing(params);
        grads
    };
    let eval = |store: &ParamStore<T>| -> Result<f64> {
        let mut g = Graph::new();
        let loss = f(store, &mut g)?;
        let v = g.value(loss).item().as_f64();
        if !v.is_finite() {
            return Err(Error::Numeric(format!("objective evaluated to {v}")));
        }
        Ok(v)
    };
    eval(params)?;

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
    };
    let paths: Vec<String> = params
        .iter()
        .filter(|(_, t)| t.requires_grad)
        .map(|(p, _)| p.to_string())
        .collect();
    for path in paths {
        let n = params.require(&path)?.len();
        let grad = analytic
            .get(&path)
            .ok_or_else(|| Error::State(format!("no analytic gradient for {path}")))?
            .clone();
        for i in 0..n {
            let orig = params.require(&path)?.data()[i];
            set(&mut work, &path, i, orig + T::lit(eps));
            let up = eval(&work)?;
            set(&mut work, &path, i, orig - T::lit(eps));
            let down = eval(&work)?;
            set(&mut work, &path, i, orig);
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[i].as_f64();
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((path.clone(), i));
            }
        }
    }
    Ok(report)
}

fn set<T: Real>(store: &mut ParamStore<T>, path: &str, i: usize, v: T) {
    store.get_mut(path).expect("path present").data_mut()[i] = v;
}
