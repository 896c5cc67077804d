use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear β ramp over `steps` timesteps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    /// The 1000-step DDPM ramp (1e-4 → 0.02) rescaled to `steps` timesteps so
    /// that the terminal ᾱ stays close to zero.
    pub fn scaled_linear(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        ScheduleConfig {
            steps,
            beta_start: 1e-4 * scale,
            beta_end: (0.02 * scale).min(0.999),
        }
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 100,
            beta_start: 1e-4,
            beta_end: 0.02,
        }
    }
}

/// β, α = 1 − β and ᾱ = ∏α tables, indexed by timestep `t ∈ 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        let betas = (0..steps)
            .map(|k| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * k as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_config(cfg: &ScheduleConfig) -> Result<Self> {
        Self::linear(cfg.steps, cfg.beta_start, cfg.beta_end)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("schedule needs at least one step".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::Numeric("terminal alpha_bar underflowed to zero".into()));
        }
        Ok(DiffusionSchedule { betas, alpha_bars })
    }

    /// Number of timesteps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::domain(
                "timestep",
                t as f64,
                format!("[1, {}]", self.steps()),
            ));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }
}
