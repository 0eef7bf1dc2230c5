use serde::{Deserialize, Serialize};

use super::mlp::{GradBundle, LayerGrad, MlpParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators for one [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: GradBundle,
    pub second: GradBundle,
    pub step: u64,
    pub config: AdamConfig,
}

impl OptimizerState {
    pub fn new(params: &MlpParams) -> Self {
        Self::with_config(params, AdamConfig::default())
    }

    pub fn with_config(params: &MlpParams, config: AdamConfig) -> Self {
        Self {
            first: GradBundle::zeros_like(params),
            second: GradBundle::zeros_like(params),
            step: 0,
            config,
        }
    }

    /// One bias-corrected Adam update. Non-finite gradients are rejected before anything
    /// is modified.
    pub fn step(&mut self, params: &mut MlpParams, grads: &GradBundle, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {lr}")));
        }
        if !grads.matches(params) || !self.first.matches(params) {
            return Err(Error::Shape("gradient/optimizer shapes do not match parameters".into()));
        }
        for (k, g) in grads.layers.iter().enumerate() {
            if g.weights.iter().chain(&g.bias).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of layer {k}")));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (k, layer) in params.layers.iter_mut().enumerate() {
            let g = &grads.layers[k];
            let m = &mut self.first.layers[k];
            let v = &mut self.second.layers[k];
            update(&mut layer.weights, &g.weights, m, v, true, (beta1, beta2, eps, c1, c2, lr));
            update(&mut layer.bias, &g.bias, m, v, false, (beta1, beta2, eps, c1, c2, lr));
        }
        Ok(())
    }
}

fn update(
    p: &mut [f64],
    g: &[f64],
    m: &mut LayerGrad,
    v: &mut LayerGrad,
    weights: bool,
    (beta1, beta2, eps, c1, c2, lr): (f64, f64, f64, f64, f64, f64),
) {
    let (m, v) = if weights {
        (&mut m.weights, &mut v.weights)
    } else {
        (&mut m.bias, &mut v.bias)
    };
    for i in 0..p.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Functional form: returns updated copies of the parameters and optimizer state.
pub fn adam_step(
    params: &MlpParams,
    grads: &GradBundle,
    state: &OptimizerState,
    lr: f64,
) -> Result<(MlpParams, OptimizerState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads, lr)?;
    Ok((p, s))
}
