use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use crate::error::Result;

/// Compares an analytic gradient against central finite differences.
///
/// `f` returns the function value and its analytic gradient at a point.
/// The result is `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, point: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (_, analytic) = f(point)?;
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let (plus, _) = f(&x)?;
        x[i] = orig - h;
        let (minus, _) = f(&x)?;
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

/// [`grad_check`] for a scalar function built on a fresh [`Graph`] from one
/// input leaf of the given shape.
pub fn grad_check_graph<B>(build: B, shape: &[usize], point: &[f64], h: f64) -> Result<f64>
where
    B: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    let eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let input = g.leaf(Tensor::new(shape.to_vec(), x.to_vec())?);
        let out = build(&mut g, input)?;
        let grads = g.backward(out)?;
        Ok((g.value(out).item(), grads.get(input).data().to_vec()))
    };
    grad_check(eval, point, h)
}
