use serde::{Deserialize, Serialize};

use super::network::Denoiser;
use super::objective::{loss_and_gradient, TrainingPair};
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tcr::TcrConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient before the Adam moments.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stops early once this many updates have been made.
    pub max_steps: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-8,
            batch_size: 4,
            epochs: 50,
            max_steps: None,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("optimizer.lr = {} must be > 0", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("optimizer.{name} = {b} must be in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Config("optimizer eps must be > 0 and weight_decay >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("optimizer.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &OptimizerConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for k in 0..params.len() {
            let g = grad[k] + cfg.weight_decay * params[k];
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * g;
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * g * g;
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Batch-mean total loss per update.
    pub losses: Vec<f64>,
    pub mse: Vec<f64>,
    pub tcr: Vec<f64>,
}

impl TrainReport {
    /// Mean of the first and last `window` losses.
    pub fn head_tail_means(&self, window: usize) -> Option<(f64, f64)> {
        let w = window.min(self.losses.len());
        if w == 0 {
            return None;
        }
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((
            mean(&self.losses[..w]),
            mean(&self.losses[self.losses.len() - w..]),
        ))
    }
}

/// Adam training over shuffled mini-batches. Aborts on the first
/// non-finite loss with the failing step index.
pub fn train(
    denoiser: &mut Denoiser,
    state: &mut AdamState,
    dataset: &[TrainingPair],
    schedule: &DiffusionSchedule,
    opt: &OptimizerConfig,
    tcr_config: &TcrConfig,
    rng: &mut SeededRng,
) -> Result<TrainReport> {
    opt.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    if state.m.len() != denoiser.param_count() {
        return Err(Error::Shape("optimizer state does not match parameters".into()));
    }
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let limit = opt.max_steps.unwrap_or(usize::MAX);
    'epochs: for _ in 0..opt.epochs {
        rng.shuffle(&mut order);
        for chunk in order.chunks(opt.batch_size) {
            if report.losses.len() >= limit {
                break 'epochs;
            }
            let batch: Vec<TrainingPair> = chunk.iter().map(|&k| dataset[k].clone()).collect();
            let step = report.losses.len();
            let out = loss_and_gradient(denoiser, &batch, schedule, tcr_config, tcr_config.lambda_tcr, rng)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("training step {step}: {m}")),
                    other => other,
                })?;
            state.update(denoiser.params_mut(), &out.gradient, opt);
            if denoiser.params().iter().any(|p| !p.is_finite()) {
                return Err(Error::Numeric(format!("training step {step}: parameters diverged")));
            }
            report.losses.push(out.terms.total);
            report.mse.push(out.terms.mse);
            report.tcr.push(out.terms.tcr);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = OptimizerConfig { lr: 0.01, weight_decay: 0.0, ..OptimizerConfig::default() };
        let mut state = AdamState::new(2);
        let mut p = vec![1.0, -1.0];
        state.update(&mut p, &[0.5, -2.0], &cfg);
        // bias-corrected first step is lr * sign(g)
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert!((p[1] + 0.99).abs() < 1e-9);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let cfg = OptimizerConfig { lr: 0.05, ..OptimizerConfig::default() };
        let mut state = AdamState::new(3);
        let target = [0.3, -1.2, 2.0];
        let mut p = vec![0.0; 3];
        for _ in 0..2000 {
            let g: Vec<f64> = p.iter().zip(&target).map(|(x, t)| 2.0 * (x - t)).collect();
            state.update(&mut p, &g, &cfg);
        }
        for (x, t) in p.iter().zip(&target) {
            assert!((x - t).abs() < 1e-3);
        }
    }
}
