//! Learned-weight relative pose objective.
//!
//! The loss balances translation and rotation terms through two trainable
//! log-variance weights:
//!
//! `L = L_t * exp(-s_t) + s_t + L_r * exp(-s_r) + s_r`
//!
//! where `L_t` is the batch-mean L1 error of the translation vector and
//! `L_r` the batch-mean L1 error of the encoded rotation target. At the
//! stationary point `dL/ds = -L * exp(-s) + 1 = 0`, each weight settles at
//! the log of its term, so neither task can silently dominate. Weights
//! start at `s_t = 0` and `s_r = -3`, which boosts the rotation gradient
//! early in training.

use crate::autodiff::{Graph, NodeId, Result, Scalar, Tensor};
use crate::geometry::{RelativePose, RotationKind};

/// Trainable loss weights, stored host-side like model parameters and
/// registered into each step's graph.
#[derive(Clone, Debug)]
pub struct LossParams<T: Scalar> {
    pub s_trans: Tensor<T>,
    pub s_rot: Tensor<T>,
}

impl<T: Scalar> Default for LossParams<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> LossParams<T> {
    pub fn new() -> Self {
        LossParams {
            s_trans: Tensor::scalar(T::zero()),
            s_rot: Tensor::scalar(T::from_f64(-3.0)),
        }
    }

    /// Register both weights in a graph.
    pub fn register(&self, g: &mut Graph<T>) -> Result<LossNodes> {
        Ok(LossNodes {
            s_trans: g.param("loss.s_trans", self.s_trans.clone())?,
            s_rot: g.param("loss.s_rot", self.s_rot.clone())?,
        })
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor<T>)) {
        f("loss.s_trans", &self.s_trans);
        f("loss.s_rot", &self.s_rot);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor<T>)) {
        f("loss.s_trans", &mut self.s_trans);
        f("loss.s_rot", &mut self.s_rot);
    }
}

/// Graph handles for the registered loss weights.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub s_trans: NodeId,
    pub s_rot: NodeId,
}

/// Nodes of an assembled loss: the total plus the raw L1 terms for
/// logging.
#[derive(Clone, Copy, Debug)]
pub struct PoseLoss {
    pub total: NodeId,
    pub trans_l1: NodeId,
    pub rot_l1: NodeId,
}

/// Batch-mean L1 over rows: `mean_i sum_j |a[i,j] - b[i,j]|`.
fn row_l1_mean<T: Scalar>(g: &mut Graph<T>, a: NodeId, b: NodeId) -> Result<NodeId> {
    let width = *g.shape(a).last().expect("rank checked by caller");
    let diff = g.sub(a, b)?;
    let abs = g.abs(diff);
    let mean = g.mean_all(abs);
    // mean_all averages over rows and columns; scale back to a per-row sum.
    Ok(g.scale(mean, T::from_f64(width as f64)))
}

/// Assemble the weighted objective from batched predictions and targets.
/// `pred_t`/`target_t` are `[N, 3]`, `pred_r`/`target_r` are `[N, D]` for
/// the chosen rotation encoding.
pub fn pose_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred_t: NodeId,
    target_t: NodeId,
    pred_r: NodeId,
    target_r: NodeId,
    weights: &LossNodes,
) -> Result<PoseLoss> {
    let trans_l1 = row_l1_mean(g, pred_t, target_t)?;
    let rot_l1 = row_l1_mean(g, pred_r, target_r)?;

    let neg_st = g.neg(weights.s_trans);
    let exp_st = g.exp(neg_st);
    let term_t = g.mul(trans_l1, exp_st)?;
    let t_side = g.add(term_t, weights.s_trans)?;

    let neg_sr = g.neg(weights.s_rot);
    let exp_sr = g.exp(neg_sr);
    let term_r = g.mul(rot_l1, exp_sr)?;
    let r_side = g.add(term_r, weights.s_rot)?;

    let total = g.add(t_side, r_side)?;
    Ok(PoseLoss {
        total,
        trans_l1,
        rot_l1,
    })
}

/// Regression targets for a batch of relative poses: a `[N, 3]` position
/// delta tensor and a `[N, dim]` encoded rotation tensor.
pub fn batch_targets<T: Scalar>(
    rels: &[RelativePose],
    kind: RotationKind,
) -> (Tensor<T>, Tensor<T>) {
    let n = rels.len();
    let mut t = Vec::with_capacity(n * 3);
    let mut r = Vec::with_capacity(n * kind.dim());
    for rel in rels {
        t.extend(rel.delta_position.iter().map(|&v| T::from_f64(v)));
        r.extend(kind.encode(&rel.delta_rotation).iter().map(|&v| T::from_f64(v)));
    }
    (
        Tensor::new(vec![n, 3], t),
        Tensor::new(vec![n, kind.dim()], r),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_gradients, Adam, AdamConfig};
    use crate::geometry::{Rotation, RotationKind};
    use nalgebra::Vector3;

    /// Loss with both L1 terms pinned to chosen constants.
    fn loss_value(l_t: f64, l_r: f64, s_t: f64, s_r: f64) -> f64 {
        let mut g: Graph<f64> = Graph::inference();
        // Single row whose absolute component sum equals the target L1.
        let pred_t = g.constant(Tensor::new(vec![1, 3], vec![l_t, 0.0, 0.0]));
        let target_t = g.constant(Tensor::zeros(vec![1, 3]));
        let pred_r = g.constant(Tensor::new(vec![1, 2], vec![l_r, 0.0]));
        let target_r = g.constant(Tensor::zeros(vec![1, 2]));
        let weights = LossNodes {
            s_trans: g.input(Tensor::scalar(s_t)),
            s_rot: g.input(Tensor::scalar(s_r)),
        };
        let loss = pose_loss(&mut g, pred_t, target_t, pred_r, target_r, &weights).unwrap();
        g.value(loss.total).item()
    }

    #[test]
    fn known_values_of_the_weighted_objective() {
        // L_t = 1, L_r = 2, both weights zero:
        //   1 * e^0 + 0 + 2 * e^0 + 0 = 3.
        assert!((loss_value(1.0, 2.0, 0.0, 0.0) - 3.0).abs() < 1e-12);

        // L_t = 1 with s_t = ln 2, L_r = 2 with s_r = 0:
        //   1 * 0.5 + ln 2 + 2 = 2.5 + ln 2.
        let expected = 3.1931471805599453;
        assert!((loss_value(1.0, 2.0, std::f64::consts::LN_2, 0.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn initial_weights_boost_rotation() {
        let params: LossParams<f64> = LossParams::new();
        assert_eq!(params.s_trans.item(), 0.0);
        assert_eq!(params.s_rot.item(), -3.0);
        // exp(3) > 20: the rotation term starts heavily amplified.
        let boosted = loss_value(1.0, 1.0, 0.0, -3.0);
        let flat = loss_value(1.0, 1.0, 0.0, 0.0);
        assert!(boosted > flat + 15.0);
    }

    #[test]
    fn batch_mean_distributes_over_rows() {
        // Two rows with per-row L1 of 1.0 and 3.0: the term must be 2.0.
        let mut g: Graph<f64> = Graph::inference();
        let a = g.constant(Tensor::new(
            vec![2, 3],
            vec![0.5, -0.25, 0.25, 1.0, -1.0, 1.0],
        ));
        let b = g.constant(Tensor::zeros(vec![2, 3]));
        let l1 = row_l1_mean(&mut g, a, b).unwrap();
        assert!((g.value(l1).item() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weight_gradient_vanishes_at_log_of_term() {
        // dL/ds = 1 - L * exp(-s) is zero exactly at s = ln L.
        let l_r = 2.0f64;
        let mut g: Graph<f64> = Graph::inference();
        let pred_t = g.constant(Tensor::new(vec![1, 3], vec![1.0, 0.0, 0.0]));
        let target_t = g.constant(Tensor::zeros(vec![1, 3]));
        let pred_r = g.constant(Tensor::new(vec![1, 2], vec![l_r, 0.0]));
        let target_r = g.constant(Tensor::zeros(vec![1, 2]));
        let s_t = g.input(Tensor::scalar(0.0));
        let s_r = g.input(Tensor::scalar(l_r.ln()));
        let weights = LossNodes {
            s_trans: s_t,
            s_rot: s_r,
        };
        let loss = pose_loss(&mut g, pred_t, target_t, pred_r, target_r, &weights).unwrap();
        g.backward(loss.total).unwrap();
        assert!(g.grad(s_r).unwrap().item().abs() < 1e-12);
        // s_t sits at 0 with L_t = 1 = e^0: also stationary.
        assert!(g.grad(s_t).unwrap().item().abs() < 1e-12);
    }

    #[test]
    fn weights_learn_the_log_of_their_terms() {
        // With fixed prediction errors, Adam should drive each weight to
        // the log of its L1 term.
        let l_t = 0.5f64;
        let l_r = 2.0f64;
        let mut params: LossParams<f64> = LossParams::new();
        let mut opt = Adam::new(AdamConfig {
            lr: 5e-3,
            weight_decay: 0.0,
            ..AdamConfig::default()
        });
        for _ in 0..6000 {
            let mut g: Graph<f64> = Graph::inference();
            let pred_t = g.constant(Tensor::new(vec![1, 3], vec![l_t, 0.0, 0.0]));
            let target_t = g.constant(Tensor::zeros(vec![1, 3]));
            let pred_r = g.constant(Tensor::new(vec![1, 2], vec![l_r, 0.0]));
            let target_r = g.constant(Tensor::zeros(vec![1, 2]));
            let nodes = params.register(&mut g).unwrap();
            let loss = pose_loss(&mut g, pred_t, target_t, pred_r, target_r, &nodes).unwrap();
            g.backward(loss.total).unwrap();
            let gs_t = g.grad(nodes.s_trans).unwrap().clone();
            let gs_r = g.grad(nodes.s_rot).unwrap().clone();
            opt.step([
                ("loss.s_trans", &mut params.s_trans, &gs_t),
                ("loss.s_rot", &mut params.s_rot, &gs_r),
            ])
            .unwrap();
        }
        // Adam hovers around the stationary point with steps on the order
        // of the learning rate, so ask only for that resolution.
        assert!(
            (params.s_trans.item() - l_t.ln()).abs() < 0.05,
            "s_trans = {}",
            params.s_trans.item()
        );
        assert!(
            (params.s_rot.item() - l_r.ln()).abs() < 0.05,
            "s_rot = {}",
            params.s_rot.item()
        );
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        // Differentiate through predictions and weights at once: pack
        // them into one input vector.
        let x = Tensor::new(
            vec![12],
            vec![
                0.3, -0.2, 0.15, 0.7, -0.4, 0.9, 0.2, -0.6, 0.05, 0.45, 0.1, -0.8,
            ],
        );
        let err = check_gradients(
            &x,
            |g, id| {
                let pred_t = g.slice(id, 0, 0, 3)?;
                let pred_t = g.reshape(pred_t, vec![1, 3])?;
                let pred_r = g.slice(id, 0, 3, 6)?;
                let pred_r = g.reshape(pred_r, vec![1, 6])?;
                let s_t = g.slice(id, 0, 9, 1)?;
                let s_r = g.slice(id, 0, 10, 1)?;
                let target_t = g.constant(Tensor::new(vec![1, 3], vec![0.1, 0.2, -0.3]));
                let target_r = g.constant(Tensor::new(
                    vec![1, 6],
                    vec![0.9, 0.1, -0.1, 0.0, 1.0, 0.2],
                ));
                let weights = LossNodes {
                    s_trans: s_t,
                    s_rot: s_r,
                };
                let loss = pose_loss(g, pred_t, target_t, pred_r, target_r, &weights)?;
                Ok(loss.total)
            },
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-7, "max rel error {err}");
    }

    #[test]
    fn targets_encode_the_relative_rotation() {
        let rel = RelativePose {
            delta_position: Vector3::new(1.0, 2.0, 3.0),
            delta_rotation: Rotation::identity(),
        };
        let (t, r) = batch_targets::<f64>(&[rel, rel], RotationKind::SixD);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(r.shape(), &[2, 6]);
        assert_eq!(&t.data()[..3], &[1.0, 2.0, 3.0]);
        assert_eq!(&r.data()[..6], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }
}
