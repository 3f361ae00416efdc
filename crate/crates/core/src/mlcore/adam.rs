use serde::{Deserialize, Serialize};

use super::{lit, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("train.{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("train.eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Adam optimiser state with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T: Real> {
    pub cfg: AdamConfig,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u32,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape {
                expected: format!("{} parameters", self.m.len()),
                actual: format!("{} params, {} grads", params.len(), grads.len()),
            });
        }
        self.t += 1;
        let (b1, b2) = (self.cfg.beta1, self.cfg.beta2);
        let c1 = lit::<T>(1.0 - b1.powi(self.t as i32));
        let c2 = lit::<T>(1.0 - b2.powi(self.t as i32));
        let (b1, b2) = (lit::<T>(b1), lit::<T>(b2));
        let (lr, eps) = (lit::<T>(self.cfg.lr), lit::<T>(self.cfg.eps));
        let one = T::one();
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![0.3f64, -1.2, 4.0];
        let before = p.clone();
        let mut opt = Adam::new(3, AdamConfig::default());
        opt.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_hand_computed() {
        let mut p = vec![1.0f64];
        let mut opt = Adam::new(1, AdamConfig::default());
        opt.step(&mut p, &[1.0]).unwrap();
        // m_hat = v_hat = 1
        let expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8));
        assert!((p[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn repeated_steps_do_not_grow() {
        let mut p = vec![0.0f64];
        let mut opt = Adam::new(1, AdamConfig::default());
        opt.step(&mut p, &[1.0]).unwrap();
        let d1 = p[0].abs();
        let before = p[0];
        opt.step(&mut p, &[1.0]).unwrap();
        let d2 = (p[0] - before).abs();
        assert!(d2 <= d1 * 1.01, "{d2} vs {d1}");
    }

    #[test]
    fn divergence_detected() {
        let mut p = vec![f64::MAX];
        let mut opt = Adam::new(1, AdamConfig { lr: f64::MAX, ..AdamConfig::default() });
        assert!(matches!(opt.step(&mut p, &[-1.0]), Err(Error::Divergence)));
    }
}
