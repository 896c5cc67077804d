use rayon::prelude::*;

use super::network::Denoiser;
use super::schedule::DiffusionSchedule;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::maps::ConfMap;
use crate::rng::SeededRng;
use crate::tcr::{tcr, tcr_with_grad, TcrConfig};

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·ε`.
pub fn forward_noise(x0: &Grid, t: usize, noise: &Grid, schedule: &DiffusionSchedule) -> Result<Grid> {
    schedule.check_t(t)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.zip_map(noise, |x, e| a * x + b * e)
}

/// `x̂0 = (x_t − √(1−ᾱ_t)·ε̂) / √ᾱ_t`, left unclamped.
pub fn reconstruct_x0(x_t: &Grid, t: usize, eps_pred: &Grid, schedule: &DiffusionSchedule) -> Result<Grid> {
    schedule.check_t(t)?;
    if !x_t.all_finite() || !eps_pred.all_finite() {
        return Err(Error::Numeric(format!("non-finite input to x0 reconstruction at t={t}")));
    }
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x_t.zip_map(eps_pred, |x, e| (x - b * e) / a)
}

/// Mean squared difference over all cells.
pub fn mse_loss(eps: &Grid, eps_pred: &Grid) -> Result<f64> {
    eps.check_shape(eps_pred)?;
    let s: f64 = eps
        .as_slice()
        .iter()
        .zip(eps_pred.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(s / eps.len() as f64)
}

/// A clean map and its conditioning.
#[derive(Debug, Clone)]
pub struct TrainingPair {
    pub x0: Grid,
    pub confmap: ConfMap,
}

/// Timestep and Gaussian noise used for one training example.
#[derive(Debug, Clone)]
pub struct NoiseDraw {
    pub t: usize,
    pub noise: Grid,
}

impl NoiseDraw {
    pub fn sample(rows: usize, cols: usize, schedule: &DiffusionSchedule, rng: &mut SeededRng) -> Self {
        let t = 1 + rng.below(schedule.steps());
        NoiseDraw {
            t,
            noise: rng.normal_grid(rows, cols),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub mse: f64,
    pub tcr: f64,
}

#[derive(Debug, Clone)]
pub struct LossAndGradient {
    pub terms: LossTerms,
    pub gradient: Vec<f64>,
}

fn example_terms(
    denoiser: &Denoiser,
    pair: &TrainingPair,
    draw: &NoiseDraw,
    schedule: &DiffusionSchedule,
    tcr_config: &TcrConfig,
    lambda_tcr: f64,
    want_grad: bool,
) -> Result<(LossTerms, Option<Vec<f64>>)> {
    let steps = schedule.steps();
    let x_t = forward_noise(&pair.x0, draw.t, &draw.noise, schedule)?;
    let (eps_pred, cache) = denoiser.forward(&x_t, &pair.confmap, draw.t, steps)?;
    let n = eps_pred.len() as f64;
    let mse = mse_loss(&draw.noise, &eps_pred)?;
    let mut g_eps = if want_grad {
        Some(eps_pred.zip_map(&draw.noise, |p, e| 2.0 * (p - e) / n)?)
    } else {
        None
    };
    let mut tcr_value = 0.0;
    if lambda_tcr != 0.0 {
        let x0_hat = reconstruct_x0(&x_t, draw.t, &eps_pred, schedule)?;
        match g_eps.as_mut() {
            Some(g) => {
                let (value, g_x0) = tcr_with_grad(&x0_hat, &pair.x0, tcr_config)?;
                tcr_value = value;
                let ab = schedule.alpha_bar(draw.t);
                // ∂x̂0/∂ε̂ = −√(1−ᾱ)/√ᾱ
                let scale = -lambda_tcr * ((1.0 - ab) / ab).sqrt();
                for (a, b) in g.as_mut_slice().iter_mut().zip(g_x0.as_slice()) {
                    *a += scale * b;
                }
            }
            None => tcr_value = tcr(&x0_hat, &pair.x0, tcr_config)?,
        }
    }
    let terms = LossTerms {
        total: mse + lambda_tcr * tcr_value,
        mse,
        tcr: tcr_value,
    };
    let grad = match g_eps {
        Some(g) => {
            let mut grad = vec![0.0; denoiser.param_count()];
            denoiser.backward(&cache, &g, &mut grad)?;
            Some(grad)
        }
        None => None,
    };
    Ok((terms, grad))
}

fn check_batch(batch: &[TrainingPair], draws: &[NoiseDraw]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    if batch.len() != draws.len() {
        return Err(Error::Shape(format!(
            "{} noise draws for a batch of {}",
            draws.len(),
            batch.len()
        )));
    }
    Ok(())
}

fn non_finite(terms: &LossTerms, index: usize, t: usize) -> Option<Error> {
    if terms.total.is_finite() {
        None
    } else {
        Some(Error::Numeric(format!(
            "non-finite loss {} (mse {}, tcr {}) at batch entry {index}, timestep {t}",
            terms.total, terms.mse, terms.tcr
        )))
    }
}

/// Batch-mean of `MSE + λ·TCR` for explicit noise draws, without gradient.
pub fn loss_with_draws(
    denoiser: &Denoiser,
    batch: &[TrainingPair],
    draws: &[NoiseDraw],
    schedule: &DiffusionSchedule,
    tcr_config: &TcrConfig,
    lambda_tcr: f64,
) -> Result<LossTerms> {
    check_batch(batch, draws)?;
    let mut acc = LossTerms { total: 0.0, mse: 0.0, tcr: 0.0 };
    for (k, (pair, draw)) in batch.iter().zip(draws).enumerate() {
        let (terms, _) = example_terms(denoiser, pair, draw, schedule, tcr_config, lambda_tcr, false)?;
        if let Some(e) = non_finite(&terms, k, draw.t) {
            return Err(e);
        }
        acc.total += terms.total;
        acc.mse += terms.mse;
        acc.tcr += terms.tcr;
    }
    let b = batch.len() as f64;
    Ok(LossTerms { total: acc.total / b, mse: acc.mse / b, tcr: acc.tcr / b })
}

/// Batch-mean loss and its exact gradient for explicit noise draws.
///
/// Entries are evaluated in parallel and reduced in batch order, so the
/// result does not depend on the thread count.
pub fn loss_and_gradient_with_draws(
    denoiser: &Denoiser,
    batch: &[TrainingPair],
    draws: &[NoiseDraw],
    schedule: &DiffusionSchedule,
    tcr_config: &TcrConfig,
    lambda_tcr: f64,
) -> Result<LossAndGradient> {
    check_batch(batch, draws)?;
    let per_entry: Vec<Result<(LossTerms, Option<Vec<f64>>)>> = batch
        .par_iter()
        .zip(draws.par_iter())
        .map(|(pair, draw)| example_terms(denoiser, pair, draw, schedule, tcr_config, lambda_tcr, true))
        .collect();
    let b = batch.len() as f64;
    let mut terms = LossTerms { total: 0.0, mse: 0.0, tcr: 0.0 };
    let mut gradient = vec![0.0; denoiser.param_count()];
    for (k, entry) in per_entry.into_iter().enumerate() {
        let (t, g) = entry?;
        if let Some(e) = non_finite(&t, k, draws[k].t) {
            return Err(e);
        }
        terms.total += t.total;
        terms.mse += t.mse;
        terms.tcr += t.tcr;
        for (a, v) in gradient.iter_mut().zip(g.expect("gradient requested")) {
            *a += v;
        }
    }
    terms.total /= b;
    terms.mse /= b;
    terms.tcr /= b;
    for g in &mut gradient {
        *g /= b;
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("non-finite gradient".into()));
    }
    Ok(LossAndGradient { terms, gradient })
}

/// Draws a timestep and noise field per entry, then evaluates
/// [`loss_and_gradient_with_draws`].
pub fn loss_and_gradient(
    denoiser: &Denoiser,
    batch: &[TrainingPair],
    schedule: &DiffusionSchedule,
    tcr_config: &TcrConfig,
    lambda_tcr: f64,
    rng: &mut SeededRng,
) -> Result<LossAndGradient> {
    let draws: Vec<NoiseDraw> = batch
        .iter()
        .map(|p| NoiseDraw::sample(p.x0.rows(), p.x0.cols(), schedule, rng))
        .collect();
    loss_and_gradient_with_draws(denoiser, batch, &draws, schedule, tcr_config, lambda_tcr)
}
