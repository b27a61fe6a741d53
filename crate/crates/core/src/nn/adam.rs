use serde::{Deserialize, Serialize};

use super::{ParamSet, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Linear warm-up length in steps; 0 disables it.
    pub warmup: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimiser settings {self:?}")))
        }
    }

    pub fn lr_at(&self, t: u64) -> f64 {
        if self.warmup == 0 || t >= self.warmup {
            self.lr
        } else {
            self.lr * t as f64 / self.warmup as f64
        }
    }
}

/// Bias-corrected Adam with first/second moments laid out like the parameters.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig, params: &ParamSet<T>) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        })
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &ParamSet<T>) {
        self.t += 1;
        let c = &self.cfg;
        let lr = c.lr_at(self.t);
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (step, bc2s, eps) = (T::of(lr / bc1), T::of(bc2.sqrt()), T::of(c.eps));
        let tensors = params
            .tensors_mut()
            .iter_mut()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().iter_mut().zip(self.v.tensors_mut().iter_mut()));
        for ((p, g), (m, v)) in tensors {
            for (((p, &g), m), v) in p.data.iter_mut().zip(&g.data).zip(m.data.iter_mut()).zip(v.data.iter_mut()) {
                *m = b1 * *m + ob1 * g;
                *v = b2 * *v + ob2 * g * g;
                *p -= step * *m / (v.sqrt() / bc2s + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("w", vec![3], vec![1.0, 2.0, 3.0]);
        let mut g = ps.zeros_like();
        g.vector_mut(id).assign(&ndarray::arr1(&[0.5, -2.0, 0.0]));
        let mut opt = Adam::new(AdamConfig::default(), &ps).unwrap();
        opt.step(&mut ps, &g);
        let w = ps.vector(id);
        assert!((w[0] - (1.0 - 2e-4)).abs() < 1e-9);
        assert!((w[1] - (2.0 + 2e-4)).abs() < 1e-9);
        assert_eq!(w[2], 3.0);
        assert_eq!(opt.t, 1);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("w", vec![1], vec![5.0]);
        let mut opt = Adam::new(AdamConfig { lr: 0.1, ..AdamConfig::default() }, &ps).unwrap();
        for _ in 0..500 {
            let mut g = ps.zeros_like();
            let w = ps.vector(id)[0];
            g.vector_mut(id)[0] = 2.0 * w;
            opt.step(&mut ps, &g);
        }
        assert!(ps.vector(id)[0].abs() < 0.05);
    }

    #[test]
    fn rejects_bad_config() {
        let ps = ParamSet::<f32>::new();
        assert!(Adam::new(AdamConfig { lr: 0.0, ..AdamConfig::default() }, &ps).is_err());
        assert!(Adam::new(AdamConfig { beta2: 1.0, ..AdamConfig::default() }, &ps).is_err());
    }
}
