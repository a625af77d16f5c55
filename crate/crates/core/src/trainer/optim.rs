use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numcore::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// AdamW moments for a flat list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub weight_decay: f64,
    step: u64,
    m: Vec<Tensor<f64>>,
    v: Vec<Tensor<f64>>,
}

impl AdamW {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<f64>>, weight_decay: f64) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self {
            weight_decay,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update with bias-corrected moments and decoupled weight decay.
    /// Non-finite gradients reject the step and leave everything untouched.
    pub fn step(&mut self, params: &mut [Tensor<f64>], grads: &[Tensor<f64>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid(
                "adamw",
                format!(
                    "state has {} parameters, got {} values and {} gradients",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != self.m[k].shape() || g.shape() != self.m[k].shape() {
                return Err(Error::ShapeMismatch {
                    op: "adamw",
                    left: self.m[k].shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.all_finite() {
                return Err(Error::Diverged {
                    step: self.step as usize,
                    reason: format!("non-finite gradient for parameter {k}"),
                });
            }
        }
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for k in 0..params.len() {
            let g = grads[k].data();
            let m = self.m[k].data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * gi;
            }
            let v = self.v[k].data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * gi * gi;
            }
            let (m, v) = (self.m[k].data(), self.v[k].data());
            for (i, p) in params[k].data_mut().iter_mut().enumerate() {
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *p -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + self.weight_decay * *p);
            }
        }
        Ok(())
    }
}

/// One-cycle learning rate: cosine ramp from `max_lr / div_factor` up to
/// `max_lr` over the warmup, then cosine decay to
/// `max_lr / (div_factor * final_div_factor)` at `total_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub warmup_fraction: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

fn cosine(start: f64, end: f64, pct: f64) -> f64 {
    let c = (PI * pct).cos();
    start * (1.0 + c) / 2.0 + end * (1.0 - c) / 2.0
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        Self {
            max_lr,
            total_steps,
            warmup_fraction: 0.3,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }

    pub fn initial_lr(&self) -> f64 {
        self.max_lr / self.div_factor
    }

    pub fn final_lr(&self) -> f64 {
        self.max_lr / (self.div_factor * self.final_div_factor)
    }

    /// Step at which the rate peaks.
    pub fn warmup_end(&self) -> usize {
        ((self.warmup_fraction * self.total_steps as f64).round() as usize).clamp(1, self.total_steps.max(1))
    }

    pub fn lr(&self, step: usize) -> f64 {
        let warm = self.warmup_end();
        let step = step.min(self.total_steps);
        if step <= warm {
            cosine(self.initial_lr(), self.max_lr, step as f64 / warm as f64)
        } else {
            let span = (self.total_steps - warm) as f64;
            cosine(self.max_lr, self.final_lr(), (step - warm) as f64 / span)
        }
    }
}
