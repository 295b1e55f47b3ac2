//! Finite-difference gradient verification.
//!
//! Builds the same scalar function twice per input element with central
//! differences and compares against the analytic gradient from a single
//! backward pass. Meant to run in f64, where a step of about 1e-5 leaves
//! several digits of agreement for smooth ops.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use super::{DiffError, Result, Scalar};

/// Evaluate `f` at `x` and return the scalar output value.
pub fn eval_scalar<T, F>(f: &mut F, x: &Tensor<T>) -> Result<T>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, NodeId) -> Result<NodeId>,
{
    let mut graph = Graph::inference();
    let id = graph.input(x.clone());
    let out = f(&mut graph, id)?;
    if graph.value(out).numel() != 1 {
        return Err(DiffError::NonScalarOutput(graph.shape(out).to_vec()));
    }
    Ok(graph.value(out).item())
}

/// Maximum relative error between analytic and central-difference
/// gradients of the scalar function `f` at `x`. The relative error uses
/// `|a - b| / max(|a|, |b|, 1e-8)` so it stays meaningful near zero.
pub fn check_gradients<F>(x: &Tensor<f64>, mut f: F, eps: f64) -> Result<f64>
where
    F: FnMut(&mut Graph<f64>, NodeId) -> Result<NodeId>,
{
    let mut graph = Graph::inference();
    let id = graph.input(x.clone());
    let out = f(&mut graph, id)?;
    graph.backward(out)?;
    let analytic = graph
        .grad(id)
        .expect("input is differentiable, backward fills its gradient")
        .clone();

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = eval_scalar(&mut f, &probe)?;
        probe.data_mut()[i] = orig - eps;
        let lo = eval_scalar(&mut f, &probe)?;
        probe.data_mut()[i] = orig;
        let fd = (hi - lo) / (2.0 * eps);
        let an = analytic.data()[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_gradient_matches() {
        // f(x) = mean(x * x * x), df/dx_i = 3 x_i^2 / n
        let x = Tensor::new(vec![4], vec![0.5, -1.2, 2.0, 0.01]);
        let err = check_gradients(
            &x,
            |g, id| {
                let sq = g.mul(id, id)?;
                let cube = g.mul(sq, id)?;
                Ok(g.mean_all(cube))
            },
            1e-5,
        )
        .unwrap();
        // Truncation error of central differences dominates for the tiny
        // 0.01 entry; well under the 1e-4 acceptance threshold.
        assert!(err < 1e-5, "max rel error {}", err);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // f(x) = sum(2x) but pretend it is sum(x) by scaling after the
        // reduction on a detached path: use scale inside and compare.
        let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]);
        // Correct graph: err tiny.
        let err = check_gradients(
            &x,
            |g, id| {
                let y = g.scale(id, 2.0);
                Ok(g.sum_all(y))
            },
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9);
    }
}
