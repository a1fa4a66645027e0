//! Adam parameter updates and global-norm gradient clipping.

use super::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: step counter plus first/second moment accumulators,
/// one pair per parameter, in the order the parameters were registered.
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    moments: Vec<(Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> AdamState {
        let moments = params
            .iter()
            .map(|p| (vec![0.0; p.len()], vec![0.0; p.len()]))
            .collect();
        AdamState {
            config,
            step: 0,
            moments,
        }
    }

    /// One bias-corrected Adam step, in place. Gradients are read, never
    /// cleared; the caller zeroes them before the next backward pass.
    pub fn step(&mut self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.moments.len() {
            return Err(Error::Config(format!(
                "adam state holds {} parameters, step called with {}",
                self.moments.len(),
                params.len()
            )));
        }
        if let Some(i) = params.iter().position(|p| !p.has_grad()) {
            return Err(Error::Config(format!(
                "adam step on parameter {i} with no gradient slot; run backward first"
            )));
        }
        self.step += 1;
        let t = self.step as f64;
        let c = &self.config;
        let bias1 = 1.0 - c.beta1.powf(t);
        let bias2 = 1.0 - c.beta2.powf(t);

        for (p, (m, v)) in params.iter().zip(self.moments.iter_mut()) {
            let g = p.grad_vec();
            p.with_values_mut(|vals| {
                for i in 0..vals.len() {
                    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                    let m_hat = m[i] / bias1;
                    let v_hat = v[i] / bias2;
                    vals[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
                }
            });
        }
        Ok(())
    }
}

/// Scales all gradients down so their global L2 norm is at most `max_norm`.
pub fn clip_global_norm(params: &[Tensor], max_norm: f64) {
    let mut sq = 0.0;
    for p in params {
        for g in p.grad_vec() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return;
    }
    let scale = max_norm / norm;
    for p in params {
        let scaled: Vec<f64> = p.grad_vec().iter().map(|g| g * scale).collect();
        p.zero_grad();
        p.accumulate_grad(&scaled);
    }
}
