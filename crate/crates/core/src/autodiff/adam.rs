//! Adam with bias correction and decoupled weight decay.
//!
//! Moment slots are keyed by parameter name so the optimizer survives
//! checkpoint round-trips and does not care about registration order.

use std::collections::BTreeMap;

use super::tensor::Tensor;
use super::{DiffError, Result, Scalar};

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: applied to the weights directly, not the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-10,
            weight_decay: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Step counter plus first/second moment estimates per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    pub step: u64,
    pub slots: BTreeMap<String, Moments<T>>,
}

pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    state: AdamState<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            state: AdamState {
                step: 0,
                slots: BTreeMap::new(),
            },
        }
    }

    pub fn from_state(cfg: AdamConfig, state: AdamState<T>) -> Self {
        Adam { cfg, state }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn state(&self) -> &AdamState<T> {
        &self.state
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    /// One update over `(name, weights, gradient)` triples. Slots appear
    /// lazily the first time a name is seen; a shape change is an error.
    pub fn step<'a, I>(&mut self, params: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor<T>, &'a Tensor<T>)>,
    {
        self.begin_step();
        for (name, w, g) in params {
            self.update(name, w, g)?;
        }
        Ok(())
    }

    /// Advance the step counter. Call once per optimization step, before
    /// the `update` calls for that step.
    pub fn begin_step(&mut self) {
        self.state.step += 1;
    }

    /// Apply the current step's update to one parameter. Split from
    /// `step` so callers that enumerate parameters through a visitor can
    /// feed them one at a time.
    pub fn update(&mut self, name: &str, w: &mut Tensor<T>, g: &Tensor<T>) -> Result<()> {
        let t = self.state.step as i32;
        let b1 = T::from_f64(self.cfg.beta1);
        let b2 = T::from_f64(self.cfg.beta2);
        let eps = T::from_f64(self.cfg.eps);
        let lr = T::from_f64(self.cfg.lr);
        let wd = T::from_f64(self.cfg.weight_decay);
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        if w.numel() != g.numel() {
            return Err(DiffError::Invalid {
                op: "adam",
                detail: format!(
                    "{}: weight has {} elements, gradient {}",
                    name,
                    w.numel(),
                    g.numel()
                ),
            });
        }
        let slot = self
            .state
            .slots
            .entry(name.to_string())
            .or_insert_with(|| Moments {
                m: vec![T::zero(); w.numel()],
                v: vec![T::zero(); w.numel()],
            });
        if slot.m.len() != w.numel() {
            return Err(DiffError::Invalid {
                op: "adam",
                detail: format!(
                    "{}: stored moments have {} elements, weight {}",
                    name,
                    slot.m.len(),
                    w.numel()
                ),
            });
        }
        let wdat = w.data_mut();
        let gdat = g.data();
        for j in 0..wdat.len() {
            let gj = gdat[j];
            slot.m[j] = b1 * slot.m[j] + (T::one() - b1) * gj;
            slot.v[j] = b2 * slot.v[j] + (T::one() - b2) * gj * gj;
            let mhat = slot.m[j] / bc1;
            let vhat = slot.v[j] / bc2;
            wdat[j] = wdat[j] - lr * mhat / (vhat.sqrt() + eps) - lr * wd * wdat[j];
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_roughly_lr() {
        // With zeroed moments, mhat/sqrt(vhat) = sign(g), so the first
        // update is lr regardless of gradient magnitude.
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut opt: Adam<f64> = Adam::new(cfg);
        let mut w = Tensor::new(vec![2], vec![1.0, -2.0]);
        let g = Tensor::new(vec![2], vec![0.37, -120.0]);
        opt.step([("w", &mut w, &g)]).unwrap();
        assert!((w.data()[0] - (1.0 - 1e-4)).abs() < 1e-9);
        assert!((w.data()[1] - (-2.0 + 1e-4)).abs() < 1e-9);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let cfg = AdamConfig {
            weight_decay: 0.1,
            ..AdamConfig::default()
        };
        let mut opt: Adam<f64> = Adam::new(cfg);
        let mut w = Tensor::new(vec![1], vec![10.0]);
        let g = Tensor::zeros(vec![1]);
        opt.step([("w", &mut w, &g)]).unwrap();
        // Pure decay: w <- w - lr * wd * w.
        assert!((w.data()[0] - 10.0 * (1.0 - 1e-4 * 0.1)).abs() < 1e-12);
    }

    #[test]
    fn descends_a_quadratic() {
        let cfg = AdamConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..AdamConfig::default()
        };
        let mut opt: Adam<f64> = Adam::new(cfg);
        let mut w = Tensor::new(vec![1], vec![3.0]);
        for _ in 0..2000 {
            let g = Tensor::new(vec![1], vec![2.0 * w.data()[0]]);
            opt.step([("w", &mut w, &g)]).unwrap();
        }
        assert!(w.data()[0].abs() < 1e-2);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut opt: Adam<f64> = Adam::new(AdamConfig::default());
        let mut w = Tensor::zeros(vec![2]);
        let g = Tensor::zeros(vec![3]);
        assert!(opt.step([("w", &mut w, &g)]).is_err());
    }
}
