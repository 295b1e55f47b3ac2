//! Finite-difference oracle over the differentiable primitives.
//!
//! The per-primitive sweep lives in `verify::primitive_grad_checks` so the
//! same table backs this test and the end-to-end acceptance gate; here it
//! runs once and every entry is asserted by name. A composite attention
//! stack is checked on top, since op-interaction bugs (shape bookkeeping
//! across permute/bmm/softmax) do not show up in single-op probes.

use relpose_core::autodiff::check_gradients;
use relpose_core::verify::{fill, pack, primitive_grad_checks, unpack, weighted};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn every_primitive_matches_finite_differences() {
    let checks = primitive_grad_checks(EPS).unwrap();
    // Guard against the sweep silently losing entries in a refactor.
    assert!(checks.len() >= 25, "only {} primitives swept", checks.len());
    for c in &checks {
        assert!(
            c.max_rel_err < TOL,
            "{}: max relative error {:.3e} >= {TOL:.0e}",
            c.name,
            c.max_rel_err
        );
    }
}

#[test]
fn attention_arithmetic_matches_finite_differences() {
    // softmax(q kᵀ / √d) v with every operand differentiable.
    let q = fill(vec![2, 3, 4], 68);
    let k = fill(vec![2, 3, 4], 69);
    let v = fill(vec![2, 3, 4], 70);
    let err = check_gradients(
        &pack(&[&q, &k, &v]),
        |g, x| {
            let p = unpack(g, x, &[&[2, 3, 4], &[2, 3, 4], &[2, 3, 4]])?;
            let kt = g.permute(p[1], &[0, 2, 1])?;
            let scores = g.bmm(p[0], kt)?;
            let scores = g.scale(scores, 0.5);
            let weights = g.softmax(scores)?;
            let ctx = g.bmm(weights, p[2])?;
            weighted(g, ctx, 71)
        },
        EPS,
    )
    .unwrap();
    assert!(err < TOL, "attention: max relative error {err:.3e}");
}
