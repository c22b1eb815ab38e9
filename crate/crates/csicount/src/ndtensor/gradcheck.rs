//! Central finite-difference verification of the analytic gradients.
//!
//! Runs in double precision. The reported error is
//! `max_i |analytic_i - central_i| / max(1, |central_i|)`.

use super::{Graph, Tensor};
use crate::Result;

/// Check d(f)/d(x) for a single input tensor. `eps` is the central
/// difference step (1e-5 is a good default).
pub fn grad_check<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&Graph<f64>, &Tensor<f64>) -> Result<Tensor<f64>>,
{
    let x = x.clone();
    let xc = x.clone();
    grad_check_multi(move |g| f(g, &xc), &[x], eps, usize::MAX)
}

/// Check gradients w.r.t. every tensor in `inputs` for a function that
/// reads them as shared state. At most `max_per_tensor` evenly spaced
/// elements are perturbed per tensor (pass `usize::MAX` for all).
pub fn grad_check_multi<F>(
    f: F,
    inputs: &[Tensor<f64>],
    eps: f64,
    max_per_tensor: usize,
) -> Result<f64>
where
    F: Fn(&Graph<f64>) -> Result<Tensor<f64>>,
{
    for t in inputs {
        t.set_requires_grad(true);
        t.zero_grad();
    }
    let g = Graph::new();
    let loss = f(&g)?;
    g.backward(&loss)?;
    let analytic: Vec<Vec<f64>> = inputs
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut max_err = 0.0f64;
    for (t, grads) in inputs.iter().zip(&analytic) {
        let n = t.numel();
        let step = if n <= max_per_tensor {
            1
        } else {
            n.div_ceil(max_per_tensor)
        };
        let orig = t.data_clone();
        let mut idx = 0;
        while idx < n {
            let mut plus = orig.clone();
            plus[idx] += eps;
            t.set_data(plus)?;
            let fp = f(&Graph::inference())?.item();
            let mut minus = orig.clone();
            minus[idx] -= eps;
            t.set_data(minus)?;
            let fm = f(&Graph::inference())?.item();
            t.set_data(orig.clone())?;
            let fd = (fp - fm) / (2.0 * eps);
            let err = (grads[idx] - fd).abs() / fd.abs().max(1.0);
            if err > max_err {
                max_err = err;
            }
            idx += step;
        }
    }
    for t in inputs {
        t.zero_grad();
    }
    Ok(max_err)
}
