//! Central-difference verification of tape gradients in 64-bit mode.

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// Largest error over every checked coordinate.
    pub max_rel_error: f64,
    /// Largest error per input tensor.
    pub per_input: Vec<f64>,
    pub coordinates: usize,
}

/// `|a - n| / max(1, |a|, |n|)`: relative for large gradients, absolute near zero.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

fn eval<F>(f: &F, inputs: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
    let root = f(&mut g, &ids)?;
    let v = g.value(root).item()?;
    if !v.is_finite() {
        return Err(Error::NonFinite("gradcheck objective".into()));
    }
    Ok(v)
}

/// Compares tape gradients of `f` against central differences
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate of every input.
pub fn gradcheck_many<F>(f: F, inputs: &[Tensor<f64>], eps: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("gradcheck eps must be positive"));
    }
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = f(&mut g, &ids)?;
    if !g.value(root).item()?.is_finite() {
        return Err(Error::NonFinite("gradcheck objective".into()));
    }
    let grads = g.backward(root)?;

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut per_input = Vec::with_capacity(inputs.len());
    let mut coordinates = 0;
    for (k, id) in ids.iter().enumerate() {
        let zeros;
        let analytic = match grads.get(*id) {
            Some(t) => t.data(),
            None => {
                zeros = vec![0.0; inputs[k].len()];
                &zeros
            }
        };
        let mut worst = 0f64;
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + eps;
            let plus = eval(&f, &work)?;
            work[k].data_mut()[i] = orig - eps;
            let minus = eval(&f, &work)?;
            work[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(relative_error(analytic[i], numeric));
            coordinates += 1;
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradcheckReport { max_rel_error, per_input, coordinates })
}

/// Single-input form of [`gradcheck_many`]; returns the max relative error.
pub fn gradcheck<F>(f: F, x: &Tensor<f64>, eps: f64) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, NodeId) -> Result<NodeId>,
{
    gradcheck_many(|g, ids| f(g, ids[0]), std::slice::from_ref(x), eps).map(|r| r.max_rel_error)
}
