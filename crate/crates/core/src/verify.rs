//! Gradient verification against central finite differences.
//!
//! Two layers of oracle live here. [`primitive_grad_checks`] sweeps every
//! differentiable graph primitive with a weighted-sum readout, so each
//! backward rule is compared to 64-bit central differences in isolation.
//! [`full_model_grad_check`] perturbs every host-side weight of an
//! assembled model-plus-loss pipeline instead, rebuilding the graph per
//! probe, which catches mistakes that only appear once ops compose.
//!
//! Run both in f64: central differences at 1e-5 keep roughly ten
//! significant digits there, so a loose 1e-4 bound still catches any
//! indexing or transposition mistake in a backward rule. The fixture
//! helpers ([`fill`], [`pack`], [`unpack`], [`weighted`]) are public so
//! integration tests can build the same style of probe for composites.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{check_gradients, Graph, NodeId, Tensor};
use crate::autodiff::Result as DiffResult;
use crate::loss::{pose_loss, LossParams};
use crate::model::layers::trunc_normal;
use crate::model::{ModelConfig, Relformer, Result};

/// Deterministic wavy values in roughly [-1.2, 1.2]. The two irrational
/// frequencies keep values distinct, which matters for max-pool windows.
pub fn fill(shape: impl Into<Vec<usize>>, salt: u64) -> Tensor<f64> {
    let s = salt as f64;
    Tensor::from_fn(shape, |i| {
        let t = i as f64;
        0.9 * (1.618 * t + 0.71 * s).sin() + 0.3 * (2.236 * t + 0.13 * s).cos()
    })
}

/// Like `fill` but bounded away from zero, for ops with a kink at the
/// origin. 1e-5 probes cannot cross the kink when every value has
/// magnitude >= 0.1.
pub fn fill_off_origin(shape: impl Into<Vec<usize>>, salt: u64) -> Tensor<f64> {
    let base = fill(shape, salt);
    Tensor::from_fn(base.shape().to_vec(), |i| {
        let v = base.data()[i];
        if v >= 0.0 {
            v + 0.1
        } else {
            v - 0.1
        }
    })
}

/// Scalar readout with non-uniform weights so backward sees varied
/// upstream gradients instead of all-ones.
pub fn weighted(g: &mut Graph<f64>, y: NodeId, salt: u64) -> DiffResult<NodeId> {
    let w = fill(g.shape(y).to_vec(), salt);
    let c = g.constant(w);
    let p = g.mul(y, c)?;
    Ok(g.sum_all(p))
}

/// Carve `shapes` out of a packed 1-D input, in order.
pub fn unpack(g: &mut Graph<f64>, x: NodeId, shapes: &[&[usize]]) -> DiffResult<Vec<NodeId>> {
    let mut parts = Vec::with_capacity(shapes.len());
    let mut start = 0;
    for shape in shapes {
        let n: usize = shape.iter().product();
        let flat = g.slice(x, 0, start, n)?;
        parts.push(g.reshape(flat, shape.to_vec())?);
        start += n;
    }
    Ok(parts)
}

/// Concatenate raw tensor data into one packed 1-D input.
pub fn pack(tensors: &[&Tensor<f64>]) -> Tensor<f64> {
    let data: Vec<f64> = tensors.iter().flat_map(|t| t.data().iter().copied()).collect();
    Tensor::new(vec![data.len()], data)
}

/// One primitive's verdict from the sweep.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Compare every differentiable graph primitive against central finite
/// differences and report the worst relative error per primitive.
/// Multi-input ops pack all differentiable operands into one flat vector
/// and carve them back out with `slice` + `reshape`, which are themselves
/// covered standalone. Ops with a kink at the origin get inputs bounded
/// away from it so the probes stay on one side.
pub fn primitive_grad_checks(eps: f64) -> DiffResult<Vec<GradCheck>> {
    let mut out = Vec::new();
    let mut push = |name: &'static str, err: f64| out.push(GradCheck {
        name,
        max_rel_err: err,
    });

    // Elementwise arithmetic, with and without suffix broadcasting.
    {
        let a = fill(vec![2, 3, 4], 1);
        let b = fill(vec![2, 3, 4], 2);
        push("add", check_gradients(&pack(&[&a, &b]), |g, x| {
            let p = unpack(g, x, &[&[2, 3, 4], &[2, 3, 4]])?;
            let y = g.add(p[0], p[1])?;
            weighted(g, y, 3)
        }, eps)?);

        let c = fill(vec![3, 4], 5);
        push("add broadcast", check_gradients(&pack(&[&a, &c]), |g, x| {
            let p = unpack(g, x, &[&[2, 3, 4], &[3, 4]])?;
            let y = g.add(p[0], p[1])?;
            weighted(g, y, 6)
        }, eps)?);
    }
    {
        let a = fill(vec![2, 5], 7);
        let b = fill(vec![5], 8);
        push("sub broadcast", check_gradients(&pack(&[&a, &b]), |g, x| {
            let p = unpack(g, x, &[&[2, 5], &[5]])?;
            let y = g.sub(p[0], p[1])?;
            weighted(g, y, 9)
        }, eps)?);
    }
    {
        let a = fill(vec![2, 3, 4], 10);
        let b = fill(vec![2, 3, 4], 11);
        push("mul", check_gradients(&pack(&[&a, &b]), |g, x| {
            let p = unpack(g, x, &[&[2, 3, 4], &[2, 3, 4]])?;
            let y = g.mul(p[0], p[1])?;
            weighted(g, y, 12)
        }, eps)?);

        let c = fill(vec![4], 13);
        push("mul broadcast", check_gradients(&pack(&[&a, &c]), |g, x| {
            let p = unpack(g, x, &[&[2, 3, 4], &[4]])?;
            let y = g.mul(p[0], p[1])?;
            weighted(g, y, 14)
        }, eps)?);
    }
    {
        let a = fill(vec![3, 4], 15);
        push("scale", check_gradients(&a, |g, x| {
            let y = g.scale(x, -1.7);
            weighted(g, y, 16)
        }, eps)?);
        push("neg", check_gradients(&a, |g, x| {
            let y = g.neg(x);
            weighted(g, y, 17)
        }, eps)?);
    }

    // Linear algebra.
    {
        let a = fill(vec![3, 4], 18);
        let b = fill(vec![4, 2], 19);
        push("matmul", check_gradients(&pack(&[&a, &b]), |g, x| {
            let p = unpack(g, x, &[&[3, 4], &[4, 2]])?;
            let y = g.matmul(p[0], p[1])?;
            weighted(g, y, 20)
        }, eps)?);
    }
    {
        let a = fill(vec![2, 3, 4], 21);
        let b = fill(vec![2, 4, 2], 22);
        push("bmm", check_gradients(&pack(&[&a, &b]), |g, x| {
            let p = unpack(g, x, &[&[2, 3, 4], &[2, 4, 2]])?;
            let y = g.bmm(p[0], p[1])?;
            weighted(g, y, 23)
        }, eps)?);
    }
    {
        // Stride 1, pad 1: output spatial size equals input.
        let img = fill(vec![1, 4, 4, 2], 24);
        let ker = fill(vec![3, 3, 2, 3], 25);
        push("conv2d s1 p1", check_gradients(&pack(&[&img, &ker]), |g, x| {
            let p = unpack(g, x, &[&[1, 4, 4, 2], &[3, 3, 2, 3]])?;
            let y = g.conv2d(p[0], p[1], 1, 1)?;
            weighted(g, y, 26)
        }, eps)?);

        // Stride 2, pad 1: the downsampling configuration the backbone uses.
        let img = fill(vec![2, 5, 5, 2], 27);
        let ker = fill(vec![3, 3, 2, 2], 28);
        push("conv2d s2 p1", check_gradients(&pack(&[&img, &ker]), |g, x| {
            let p = unpack(g, x, &[&[2, 5, 5, 2], &[3, 3, 2, 2]])?;
            let y = g.conv2d(p[0], p[1], 2, 1)?;
            weighted(g, y, 29)
        }, eps)?);
    }

    // Activations and normalization.
    {
        let a = fill_off_origin(vec![3, 5], 30);
        push("relu", check_gradients(&a, |g, x| {
            let y = g.relu(x);
            weighted(g, y, 31)
        }, eps)?);
    }
    {
        let a = fill(vec![3, 5], 32);
        push("gelu", check_gradients(&a, |g, x| {
            let y = g.gelu(x);
            weighted(g, y, 33)
        }, eps)?);
    }
    {
        let a = fill_off_origin(vec![4, 3], 34);
        push("abs", check_gradients(&a, |g, x| {
            let y = g.abs(x);
            weighted(g, y, 35)
        }, eps)?);
    }
    {
        let a = fill(vec![2, 6], 36);
        push("exp", check_gradients(&a, |g, x| {
            let y = g.exp(x);
            weighted(g, y, 37)
        }, eps)?);
    }
    {
        let a = fill(vec![2, 3, 5], 38);
        push("softmax", check_gradients(&a, |g, x| {
            let y = g.softmax(x)?;
            weighted(g, y, 39)
        }, eps)?);
    }
    {
        let a = fill(vec![3, 6], 40);
        let gamma = fill_off_origin(vec![6], 41);
        let beta = fill(vec![6], 42);
        push("layer_norm", check_gradients(&pack(&[&a, &gamma, &beta]), |g, x| {
            let p = unpack(g, x, &[&[3, 6], &[6], &[6]])?;
            let y = g.layer_norm(p[0], p[1], p[2])?;
            weighted(g, y, 43)
        }, eps)?);
    }
    push("dropout", dropout_grad_check(eps));

    // Reductions. exp on top gives each one a non-unit upstream gradient.
    {
        let a = fill(vec![3, 4], 44);
        push("sum_all", check_gradients(&a, |g, x| {
            let s = g.sum_all(x);
            let s = g.scale(s, 0.05);
            Ok(g.exp(s))
        }, eps)?);
        push("mean_all", check_gradients(&a, |g, x| {
            let s = g.mean_all(x);
            Ok(g.exp(s))
        }, eps)?);
    }
    {
        let a = fill(vec![2, 3, 4], 46);
        push("mean_axis 0", check_gradients(&a, |g, x| {
            let y = g.mean_axis(x, 0)?;
            weighted(g, y, 47)
        }, eps)?);
        push("mean_axis 1", check_gradients(&a, |g, x| {
            let y = g.mean_axis(x, 1)?;
            weighted(g, y, 48)
        }, eps)?);
    }

    // Shape surgery.
    {
        let a = fill(vec![2, 3, 4], 49);
        push("reshape", check_gradients(&a, |g, x| {
            let y = g.reshape(x, vec![4, 6])?;
            weighted(g, y, 50)
        }, eps)?);
        push("permute", check_gradients(&a, |g, x| {
            let y = g.permute(x, &[2, 0, 1])?;
            weighted(g, y, 52)
        }, eps)?);
    }
    {
        let a = fill(vec![2, 5, 3], 53);
        push("slice", check_gradients(&a, |g, x| {
            let y = g.slice(x, 1, 1, 3)?;
            weighted(g, y, 54)
        }, eps)?);
    }
    {
        let a = fill(vec![2, 1, 3], 55);
        push("expand", check_gradients(&a, |g, x| {
            let y = g.expand(x, 1, 4)?;
            weighted(g, y, 56)
        }, eps)?);
    }
    {
        let a = fill(vec![2, 2, 3], 57);
        let b = fill(vec![2, 4, 3], 58);
        push("concat", check_gradients(&pack(&[&a, &b]), |g, x| {
            let p = unpack(g, x, &[&[2, 2, 3], &[2, 4, 3]])?;
            let y = g.concat(&[p[0], p[1]], 1)?;
            weighted(g, y, 59)
        }, eps)?);
    }

    // Pooling and lookup.
    {
        let a = fill(vec![1, 4, 4, 2], 60);
        push("avg_pool2d", check_gradients(&a, |g, x| {
            let y = g.avg_pool2d(x, 2, 2)?;
            weighted(g, y, 61)
        }, eps)?);
        let a = fill(vec![1, 4, 4, 2], 62);
        push("max_pool2d", check_gradients(&a, |g, x| {
            let y = g.max_pool2d(x, 2, 2)?;
            weighted(g, y, 63)
        }, eps)?);
    }
    {
        let table = fill(vec![5, 3], 64);
        push("embedding", check_gradients(&table, |g, x| {
            let y = g.embedding(x, &[0, 3, 3, 1, 4, 0])?;
            weighted(g, y, 65)
        }, eps)?);
    }

    Ok(out)
}

/// Dropout needs train mode and a fixed mask, which the shared checker
/// does not build: rebuild a graph with the same seed and op order per
/// probe so every evaluation sees the same mask.
fn dropout_grad_check(eps: f64) -> f64 {
    let x = fill(vec![4, 6], 66);
    let w = fill(vec![4, 6], 67);
    let p = 0.35;
    let seed = 404;

    let eval = |probe: &Tensor<f64>| -> f64 {
        let mut g = Graph::new(true, seed);
        let id = g.input(probe.clone());
        let d = g.dropout(id, p).expect("valid rate");
        let c = g.constant(w.clone());
        let m = g.mul(d, c).expect("same shape");
        let s = g.sum_all(m);
        g.value(s).item()
    };

    let mut g = Graph::new(true, seed);
    let id = g.input(x.clone());
    let d = g.dropout(id, p).expect("valid rate");

    // The mask must actually drop something and keep something, otherwise
    // this check degenerates to the identity.
    let zeros = g.value(d).data().iter().filter(|&&v| v == 0.0).count();
    assert!(zeros > 0 && zeros < x.numel(), "degenerate mask: {zeros} zeros");

    let c = g.constant(w.clone());
    let m = g.mul(d, c).expect("same shape");
    let s = g.sum_all(m);
    g.backward(s).expect("scalar output");
    let analytic = g.grad(id).expect("input gradient").clone();

    let mut worst = 0.0f64;
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let hi = eval(&probe);
        probe.data_mut()[i] = orig - eps;
        let lo = eval(&probe);
        probe.data_mut()[i] = orig;
        let fd = (hi - lo) / (2.0 * eps);
        let an = analytic.data()[i];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

/// Max relative error between analytic and central-difference gradients
/// over every parameter element of a model-plus-loss graph, including
/// the two loss weights. Use a config with dropout 0 so repeated
/// forwards agree.
pub fn full_model_grad_check(cfg: &ModelConfig, seed: u64, eps: f64) -> Result<f64> {
    assert_eq!(cfg.dropout, 0.0, "finite differences need a deterministic forward");
    let mut model: Relformer<f64> = Relformer::new(cfg.clone(), seed)?;
    let mut loss_params: LossParams<f64> = LossParams::new();

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n = 2;
    let img1 = trunc_normal::<f64>(&mut rng, &[n, cfg.image, cfg.image, cfg.in_channels], 1.0);
    let img2 = trunc_normal::<f64>(&mut rng, &[n, cfg.image, cfg.image, cfg.in_channels], 1.0);
    let tgt_t = trunc_normal::<f64>(&mut rng, &[n, 3], 1.0);
    let tgt_r = trunc_normal::<f64>(&mut rng, &[n, cfg.rot.dim()], 1.0);

    let eval = |model: &Relformer<f64>, lp: &LossParams<f64>| -> Result<f64> {
        let mut g: Graph<f64> = Graph::inference();
        let i1 = g.input(img1.clone());
        let i2 = g.input(img2.clone());
        let pred = model.forward(&mut g, i1, i2)?;
        let tt = g.constant(tgt_t.clone());
        let tr = g.constant(tgt_r.clone());
        let weights = lp.register(&mut g)?;
        let loss = pose_loss(&mut g, pred.trans, tt, pred.rot, tr, &weights)?;
        Ok(g.value(loss.total).item())
    };

    // Analytic gradients from one backward pass.
    let mut analytic = std::collections::BTreeMap::new();
    {
        let mut g: Graph<f64> = Graph::inference();
        let i1 = g.input(img1.clone());
        let i2 = g.input(img2.clone());
        let pred = model.forward(&mut g, i1, i2)?;
        let tt = g.constant(tgt_t.clone());
        let tr = g.constant(tgt_r.clone());
        let weights = loss_params.register(&mut g)?;
        let loss = pose_loss(&mut g, pred.trans, tt, pred.rot, tr, &weights)?;
        g.backward(loss.total)?;
        for (name, id) in g.params().to_vec() {
            let grad = g
                .grad(id)
                .map(|t| t.data().to_vec())
                .unwrap_or_else(|| vec![0.0; g.value(id).numel()]);
            analytic.insert(name, grad);
        }
    }

    // Probe every element of every parameter.
    let names: Vec<String> = analytic.keys().cloned().collect();
    let mut worst = 0.0f64;
    for name in names {
        let grads = &analytic[&name];
        for i in 0..grads.len() {
            let probe = |delta: f64, model: &mut Relformer<f64>, lp: &mut LossParams<f64>| {
                let mut bump = |n: &str, t: &mut crate::autodiff::Tensor<f64>| {
                    if n == name {
                        t.data_mut()[i] += delta;
                    }
                };
                model.visit_mut(&mut bump);
                lp.visit_mut(&mut bump);
            };
            probe(eps, &mut model, &mut loss_params);
            let hi = eval(&model, &loss_params)?;
            probe(-2.0 * eps, &mut model, &mut loss_params);
            let lo = eval(&model, &loss_params)?;
            probe(eps, &mut model, &mut loss_params);

            let fd = (hi - lo) / (2.0 * eps);
            let an = grads[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RotationKind;
    use crate::model::Aggregator;

    #[test]
    fn tiny_transformer_model_matches_finite_differences() {
        let cfg = ModelConfig {
            image: 8,
            in_channels: 2,
            stage_channels: vec![3, 4],
            hidden: 8,
            layers: 1,
            heads: 2,
            mlp: 8,
            dropout: 0.0,
            rot: RotationKind::SixD,
            agg: Aggregator::Transformer,
        };
        let err = full_model_grad_check(&cfg, 3, 1e-5).unwrap();
        assert!(err < 1e-4, "max rel error {err}");
    }
}
