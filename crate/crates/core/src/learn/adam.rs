use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ADAM_EPS: f64 = 1e-8;

/// Adam with bias correction over a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {lr}")));
        }
        for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(Self {
            lr,
            beta1,
            beta2,
            eps: ADAM_EPS,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::dim(format!(
                "adam state of length {} with {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(3, 1e-3, 0.9, 0.99).unwrap();
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..10 {
            adam.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_steps_at_lr() {
        let mut adam = Adam::new(2, 1e-3, 0.9, 0.99).unwrap();
        let mut p = vec![0.0, 0.0];
        for _ in 0..2000 {
            adam.step(&mut p, &[3.0, -0.01]).unwrap();
        }
        let mut q = p.clone();
        adam.step(&mut q, &[3.0, -0.01]).unwrap();
        assert!(((p[0] - q[0]) - 1e-3).abs() < 1e-9);
        assert!(((q[1] - p[1]) - 1e-3).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(Adam::new(1, 0.0, 0.9, 0.99).is_err());
        assert!(Adam::new(1, 1e-3, 1.0, 0.99).is_err());
        assert!(Adam::new(1, 1e-3, 0.9, -0.1).is_err());
    }
}
