//! Central finite-difference check of reverse-mode gradients.

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of a gradient check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest error over all inputs, each element's error being
    /// `|analytic - numeric| / max(‖analytic‖∞, ‖numeric‖∞)` of its input tensor.
    pub max_rel_error: f64,
    /// `(input, element)` where the largest error occurred.
    pub worst: (usize, usize),
    pub evaluations: usize,
}

/// Check `d sum(f(x)) / dx` for a single input.
pub fn grad_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, Var) -> Result<Var>,
{
    let report = grad_check_multi(|g, vars| f(g, vars[0]), std::slice::from_ref(x), h)?;
    Ok(report.max_rel_error)
}

/// Check the gradient of `sum(f(inputs))` with respect to every input tensor.
///
/// `f` must be deterministic: it is re-evaluated twice per input element.
pub fn grad_check_multi<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step {h} must be positive")));
    }
    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).sum())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let out = if g.value(out).len() == 1 { out } else { g.sum(out) };
    let grads = g.backward(out)?;

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: (0, 0),
        evaluations: 0,
    };
    for (ti, var) in vars.iter().enumerate() {
        let analytic = match grads.get(*var) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; inputs[ti].len()],
        };
        let mut numeric = vec![0.0; analytic.len()];
        for (i, num) in numeric.iter_mut().enumerate() {
            let orig = work[ti].data()[i];
            work[ti].data_mut()[i] = orig + h;
            let plus = eval(&work)?;
            work[ti].data_mut()[i] = orig - h;
            let minus = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            *num = (plus - minus) / (2.0 * h);
            report.evaluations += 2;
        }
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            continue;
        }
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            let err = (a - n).abs() / scale;
            if !err.is_finite() {
                return Err(Error::NonFinite(format!("gradient of input {ti} element {i}")));
            }
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = (ti, i);
            }
        }
    }
    Ok(report)
}
