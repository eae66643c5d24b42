//! Adam and exponential moving averages of parameters.

use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tensor};
use crate::GanError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-4, beta1: 0.5, beta2: 0.9, eps: 1e-8 }
    }
}

/// Adam state for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.rows, p.cols)).collect();
        Adam { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn update(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<(), GanError> {
        check_shapes(params, grads)?;
        check_shapes(params, &self.m)?;
        self.step += 1;
        let c = self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let bc1 = 1.0 - c.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        let step_size = T::from_f64(c.lr / bc1);
        let bc2_sqrt = T::from_f64(bc2.sqrt());
        let eps = T::from_f64(c.eps);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((pi, &gi), mi), vi) in p.data.iter_mut().zip(&g.data).zip(&mut m.data).zip(&mut v.data) {
                *mi = b1 * *mi + (T::ONE - b1) * gi;
                *vi = b2 * *vi + (T::ONE - b2) * gi * gi;
                *pi = *pi - step_size * *mi / (vi.sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}

fn check_shapes<T: Real>(a: &[Tensor<T>], b: &[Tensor<T>]) -> Result<(), GanError> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.shape() != y.shape()) {
        return Err(GanError::Shape("parameter lists differ in layout".into()));
    }
    Ok(())
}

/// `shadow ← decay·shadow + (1 − decay)·current`, elementwise.
pub fn ema_update<T: Real>(shadow: &mut [Tensor<T>], current: &[Tensor<T>], decay: T) -> Result<(), GanError> {
    if !(decay > T::ZERO && decay < T::ONE) {
        return Err(GanError::Config(format!("ema decay must lie in (0, 1), got {decay:?}")));
    }
    check_shapes(shadow, current)?;
    let keep = T::ONE - decay;
    for (s, c) in shadow.iter_mut().zip(current) {
        for (si, &ci) in s.data.iter_mut().zip(&c.data) {
            *si = decay * *si + keep * ci;
        }
    }
    Ok(())
}
