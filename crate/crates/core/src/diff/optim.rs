use std::f64::consts::PI;

use crate::error::{Error, Result};

use super::Param;

/// Bias-corrected Adam.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    /// Applies one update from each parameter's accumulated `grad`.
    /// Gradients are left in place; callers clear them between steps.
    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>, lr: f64) {
        for p in params {
            p.step += 1;
            let t = p.step as i32;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            let grads = p.grad.values();
            let m = p.adam_m.values_mut();
            for (mi, &g) in m.iter_mut().zip(grads) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
            }
            let v = p.adam_v.values_mut();
            for (vi, &g) in v.iter_mut().zip(grads) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            }
            let (m, v) = (p.adam_m.values(), p.adam_v.values());
            for ((w, &mi), &vi) in p.value.values_mut().iter_mut().zip(m).zip(v) {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

/// Cosine-annealed learning rate at step `t` of `t_max`.
pub fn cosine_anneal(lr0: f64, lr_min: f64, t: usize, t_max: usize) -> Result<f64> {
    if t_max == 0 {
        return Err(Error::Range("cosine schedule needs at least one step".into()));
    }
    if t > t_max {
        return Err(Error::Range(format!("step {t} beyond schedule length {t_max}")));
    }
    if t == 0 {
        return Ok(lr0);
    }
    if t == t_max {
        return Ok(lr_min);
    }
    let phase = PI * t as f64 / t_max as f64;
    Ok(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + phase.cos()))
}
