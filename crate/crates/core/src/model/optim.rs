use serde::{Deserialize, Serialize};

use super::{ParamGroup, ParamSet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Step schedule: the base rate is multiplied by `factor` for every
/// milestone strictly below the current (1-based) epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub milestones: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self {
            base,
            milestones: Vec::new(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|(m, _)| epoch > *m)
            .fold(self.base, |lr, (_, f)| lr * f)
    }
}

/// SGD with classical momentum; weight decay enters the velocity:
///
/// `v <- momentum * v + grad + weight_decay * param`, `param <- param - lr * v`.
#[derive(Clone, Debug)]
pub struct SgdMomentum<T> {
    lr: T,
    momentum: T,
    weight_decay: T,
    velocity: ParamSet<T>,
    group_scale: [T; 3],
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(params: &ParamSet<T>, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr: T::of(lr),
            momentum: T::of(momentum),
            weight_decay: T::of(weight_decay),
            velocity: ParamSet::zeros_like(params),
            group_scale: [T::one(); 3],
        }
    }

    pub fn lr(&self) -> T {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = T::of(lr);
    }

    /// Per-group learning-rate multiplier. A zero scale freezes the group.
    pub fn set_group_scale(&mut self, group: ParamGroup, scale: f64) {
        self.group_scale[group_slot(group)] = T::of(scale);
    }

    pub fn velocity(&self) -> &ParamSet<T> {
        &self.velocity
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) -> Result<()> {
        if params.tensors().len() != grads.tensors().len()
            || params.tensors().len() != self.velocity.tensors().len()
        {
            return Err(Error::invalid("optimizer state does not match parameters"));
        }
        for ((p, g), v) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.velocity.tensors_mut())
        {
            if p.shape != g.shape || p.shape != v.shape {
                return Err(Error::dims(p.data.len(), g.data.len(), p.name.clone()));
            }
            let scale = self.group_scale[group_slot(p.group())];
            if scale == T::zero() {
                continue;
            }
            let lr = self.lr * scale;
            for ((w, &gw), vw) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
                *vw = self.momentum * *vw + gw + self.weight_decay * *w;
                *w -= lr * *vw;
            }
            if p.data.iter().any(|w| !w.is_finite()) {
                return Err(Error::NonFinite(p.name.clone()));
            }
        }
        Ok(())
    }
}

fn group_slot(group: ParamGroup) -> usize {
    match group {
        ParamGroup::Encoder => 0,
        ParamGroup::Projection => 1,
        ParamGroup::Classifier => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::super::Tensor;
    use super::*;

    fn scalar_set(w: f64) -> ParamSet<f64> {
        ParamSet {
            tensors: vec![Tensor {
                name: "enc1.bias".into(),
                shape: vec![1],
                data: vec![w],
            }],
        }
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut p = scalar_set(0.7);
        let g = scalar_set(0.0);
        let mut opt = SgdMomentum::new(&p, 0.1, 0.9, 0.0);
        opt.step(&mut p, &g).unwrap();
        assert_eq!(p.flat(), vec![0.7]);
    }

    #[test]
    fn single_plain_step() {
        let mut p = scalar_set(1.0);
        let mut opt = SgdMomentum::new(&p, 0.1, 0.0, 0.0);
        opt.step(&mut p, &scalar_set(1.0)).unwrap();
        assert!((p.flat()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn quadratic_bowl_contracts() {
        // f(w) = w^2 / 2, so each step multiplies w by 1 - lr * (1 + wd)
        let (lr, wd) = (0.1, 1e-4);
        let mut p = scalar_set(1.0);
        let mut opt = SgdMomentum::new(&p, lr, 0.0, wd);
        for _ in 0..100 {
            let g = p.clone();
            opt.step(&mut p, &g).unwrap();
        }
        let expected = (1.0f64 - lr * (1.0 + wd)).powi(100);
        let w = p.flat()[0];
        assert!((w - expected).abs() < 1e-12);
        assert!(w.abs() < 1e-4);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = scalar_set(0.0);
        let mut opt = SgdMomentum::new(&p, 1.0, 0.9, 0.0);
        opt.step(&mut p, &scalar_set(1.0)).unwrap();
        opt.step(&mut p, &scalar_set(1.0)).unwrap();
        // v1 = 1, v2 = 1.9
        assert!((p.flat()[0] + 2.9).abs() < 1e-12);
    }

    #[test]
    fn frozen_group_is_untouched() {
        let mut p = scalar_set(1.0);
        let mut opt = SgdMomentum::new(&p, 0.1, 0.9, 1e-4);
        opt.set_group_scale(ParamGroup::Encoder, 0.0);
        opt.step(&mut p, &scalar_set(3.0)).unwrap();
        assert_eq!(p.flat(), vec![1.0]);
    }

    #[test]
    fn nan_is_reported_by_name() {
        let mut p = scalar_set(1.0);
        let mut opt = SgdMomentum::new(&p, 0.1, 0.9, 0.0);
        let err = opt.step(&mut p, &scalar_set(f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::NonFinite(name) if name == "enc1.bias"));
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule {
            base: 0.1,
            milestones: vec![(125, 0.1), (200, 0.1)],
        };
        assert!((s.lr_at(125) - 0.1).abs() < 1e-15);
        assert!((s.lr_at(126) - 0.01).abs() < 1e-15);
        assert!((s.lr_at(201) - 0.001).abs() < 1e-15);
    }
}
