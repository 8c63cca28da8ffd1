//! Adaptive-moment (Adam) optimizer over flat parameter vectors.
//!
//! One `OptimState` drives one model; models expose their parameters as a
//! single flat `Vec<f64>` in a fixed order. A step applies, in this order:
//! global-norm gradient clipping, L2 weight decay added to the clipped
//! gradient, then the bias-corrected moment update. The order is part of the
//! contract and is pinned by a hand-executed trace in the tests.

use super::linalg;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global max-norm applied to the raw gradient before anything else.
    /// `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            clip_norm: Some(1.0),
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimState {
    pub fn new(param_count: usize) -> Self {
        OptimState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// One update. `grads` is consumed in place (clipping and weight decay
    /// rewrite it). `context` names the parameter block in numeric errors.
    pub fn step(
        &mut self,
        cfg: &AdamConfig,
        context: &str,
        params: &mut [f64],
        grads: &mut [f64],
    ) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape {
                context: "OptimState::step params",
                expected: self.m.len(),
                got: params.len(),
            });
        }
        if grads.len() != self.m.len() {
            return Err(Error::Shape {
                context: "OptimState::step grads",
                expected: self.m.len(),
                got: grads.len(),
            });
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {context}[{i}]")));
        }

        if let Some(max_norm) = cfg.clip_norm {
            let norm = linalg::norm2(grads);
            if norm > max_norm {
                linalg::scale(grads, max_norm / norm);
            }
        }
        if cfg.weight_decay != 0.0 {
            for (g, p) in grads.iter_mut().zip(params.iter()) {
                *g += cfg.weight_decay * *p;
            }
        }

        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
        if let Some(i) = params.iter().position(|p| !p.is_finite()) {
            return Err(Error::NonFinite(format!("parameter {context}[{i}]")));
        }
        Ok(())
    }
}
