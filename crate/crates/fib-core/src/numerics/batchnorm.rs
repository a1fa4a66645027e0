//! The batch-normalizing transform and its running statistics.

use super::tensor::{Op, Tensor};
use crate::{Error, Result};

/// Which statistics a batch-norm site reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with statistics of the current batch and fold them into
    /// the running estimates.
    Batch,
    /// Normalize with the stored running estimates; nothing is mutated.
    Population,
}

/// Running mean/variance for one batch-norm site.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
    pub initialized: bool,
}

impl BatchStats {
    pub fn new(features: usize, momentum: f64) -> BatchStats {
        assert!(momentum > 0.0 && momentum <= 1.0, "momentum must be in (0,1]");
        BatchStats {
            mean: vec![0.0; features],
            var: vec![0.0; features],
            momentum,
            initialized: false,
        }
    }

    fn update(&mut self, batch_mean: &[f64], batch_var: &[f64]) {
        if !self.initialized {
            self.mean.copy_from_slice(batch_mean);
            self.var.copy_from_slice(batch_var);
            self.initialized = true;
            return;
        }
        let m = self.momentum;
        for j in 0..self.mean.len() {
            self.mean[j] = (1.0 - m) * self.mean[j] + m * batch_mean[j];
            self.var[j] = (1.0 - m) * self.var[j] + m * batch_var[j];
        }
    }
}

/// Running statistics of one batch-norm site across recurrence steps.
///
/// Each timestep keeps its own running pair, mirroring how the state
/// scale of a recurrent cell varies with depth; population reads past
/// the deepest trained step reuse the last pair.
#[derive(Debug, Clone)]
pub struct BnSiteStats {
    features: usize,
    momentum: f64,
    steps: Vec<BatchStats>,
}

impl BnSiteStats {
    pub fn new(features: usize, momentum: f64) -> BnSiteStats {
        BnSiteStats {
            features,
            momentum,
            steps: Vec::new(),
        }
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn step(&self, t: usize) -> Option<&BatchStats> {
        self.steps.get(t)
    }

    /// The running pair for recurrence step `t`. Batch mode extends the
    /// sequence on demand; population mode clamps to the deepest step
    /// seen in training and fails when nothing was ever collected.
    pub fn for_step(&mut self, t: usize, mode: BnMode) -> Result<&mut BatchStats> {
        match mode {
            BnMode::Batch => {
                while self.steps.len() <= t {
                    self.steps.push(BatchStats::new(self.features, self.momentum));
                }
                Ok(&mut self.steps[t])
            }
            BnMode::Population => {
                if self.steps.is_empty() {
                    return Err(Error::Validation(
                        "population-mode batch norm before any statistics were collected".into(),
                    ));
                }
                let idx = t.min(self.steps.len() - 1);
                Ok(&mut self.steps[idx])
            }
        }
    }

    /// Rebuilds a site from serialized per-step pairs.
    pub fn from_steps(features: usize, momentum: f64, steps: Vec<BatchStats>) -> BnSiteStats {
        BnSiteStats {
            features,
            momentum,
            steps,
        }
    }

    pub fn steps(&self) -> &[BatchStats] {
        &self.steps
    }
}

/// γ ⊙ (x − mean) / sqrt(var + ε) over an m×n batch with per-feature
/// statistics.
///
/// Batch mode uses biased (population-divisor) batch variance and folds
/// the batch statistics into `stats`; population mode reads `stats` and
/// leaves them untouched. Centering subtracts row 0 before averaging so
/// a constant batch normalizes to exact zeros.
pub fn batch_norm(
    x: &Tensor,
    gamma: &Tensor,
    eps: f64,
    stats: &mut BatchStats,
    mode: BnMode,
) -> Result<Tensor> {
    let shape = x.shape();
    if shape.len() != 2 {
        return Err(Error::shape("batch_norm", &shape, &[0, gamma.len()]));
    }
    let (m, n) = (shape[0], shape[1]);
    if m == 0 {
        return Err(Error::Validation("batch_norm on empty batch".into()));
    }
    if gamma.len() != n || stats.mean.len() != n {
        return Err(Error::shape("batch_norm", &shape, &gamma.shape()));
    }

    let v = x.value_vec();
    let (mean, var) = match mode {
        BnMode::Batch => {
            let mut mean = vec![0.0; n];
            let mut var = vec![0.0; n];
            for j in 0..n {
                let shift = v[j]; // row 0 as reference point
                let mut acc = 0.0;
                for i in 0..m {
                    acc += v[i * n + j] - shift;
                }
                let centered_mean = acc / m as f64;
                mean[j] = shift + centered_mean;
                let mut sq = 0.0;
                for i in 0..m {
                    let d = (v[i * n + j] - shift) - centered_mean;
                    sq += d * d;
                }
                var[j] = sq / m as f64;
            }
            stats.update(&mean, &var);
            (mean, var)
        }
        BnMode::Population => {
            if !stats.initialized {
                return Err(Error::Validation(
                    "batch_norm in population mode before any batch statistics were collected"
                        .into(),
                ));
            }
            (stats.mean.clone(), stats.var.clone())
        }
    };

    let inv_std: Vec<f64> = var.iter().map(|&s| 1.0 / (s + eps).sqrt()).collect();
    let gv = gamma.value_vec();
    let mut normalized = vec![0.0; m * n];
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let shift = if matches!(mode, BnMode::Batch) { v[j] } else { 0.0 };
            let xc = (v[i * n + j] - shift) - (mean[j] - shift);
            let xn = xc * inv_std[j];
            normalized[i * n + j] = xn;
            out[i * n + j] = gv[j] * xn;
        }
    }

    if !x.needs_grad() && !gamma.needs_grad() {
        return Ok(Tensor::constant(vec![m, n], out));
    }

    let (px, pg) = (x.clone(), gamma.clone());
    let (nx, ng) = (x.needs_grad(), gamma.needs_grad());
    let batch_mode = matches!(mode, BnMode::Batch);
    let op = Op {
        parents: vec![x.clone(), gamma.clone()],
        backward: Box::new(move |g| {
            if ng {
                pg.accumulate_grad_with(|gg| {
                    for i in 0..m {
                        for j in 0..n {
                            gg[j] += g[i * n + j] * normalized[i * n + j];
                        }
                    }
                });
            }
            if nx {
                let mut dx = vec![0.0; m * n];
                if batch_mode {
                    // Gradient through the batch statistics:
                    // dx = inv_std/m * (m*dxn - Σ dxn - xn * Σ dxn*xn)
                    for j in 0..n {
                        let mut sum_dxn = 0.0;
                        let mut sum_dxn_xn = 0.0;
                        for i in 0..m {
                            let dxn = g[i * n + j] * gv[j];
                            sum_dxn += dxn;
                            sum_dxn_xn += dxn * normalized[i * n + j];
                        }
                        let mf = m as f64;
                        for i in 0..m {
                            let dxn = g[i * n + j] * gv[j];
                            dx[i * n + j] = inv_std[j] / mf
                                * (mf * dxn - sum_dxn - normalized[i * n + j] * sum_dxn_xn);
                        }
                    }
                } else {
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = g[i * n + j] * gv[j] * inv_std[j];
                        }
                    }
                }
                px.accumulate_grad(&dx);
            }
        }),
    };
    Ok(Tensor::from_op(vec![m, n], out, op))
}
