//! Target-consistency regularization.
//!
//! Both maps are thresholded against their own local statistics
//! (`τ = μ + w·σ` over a square window with reflect padding), turned into soft
//! foreground probabilities with a sigmoid, and compared with a focal-style
//! cross-entropy. The loss is differentiable in the reconstructed map,
//! including through its threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcrConfig {
    /// Pooling window side in bins; odd.
    pub window: usize,
    /// Threshold sensitivity.
    pub w: f64,
    /// Sigmoid sharpness.
    pub alpha: f64,
    /// Focusing exponent.
    pub gamma: f64,
    pub lambda_tcr: f64,
}

impl Default for TcrConfig {
    fn default() -> Self {
        TcrConfig {
            window: 9,
            w: 3.0,
            alpha: 10.0,
            gamma: 2.0,
            lambda_tcr: 0.1,
        }
    }
}

impl TcrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(Error::Config(format!(
                "tcr.window = {} must be odd and >= 3",
                self.window
            )));
        }
        if !(self.w.is_finite() && self.w >= 0.0) {
            return Err(Error::Config(format!("tcr.w = {} must be >= 0", self.w)));
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("tcr.alpha = {} must be > 0", self.alpha)));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!("tcr.gamma = {} must be >= 0", self.gamma)));
        }
        if !(self.lambda_tcr.is_finite() && self.lambda_tcr >= 0.0) {
            return Err(Error::Config(format!(
                "tcr.lambda_tcr = {} must be >= 0",
                self.lambda_tcr
            )));
        }
        Ok(())
    }
}

/// Reflect-101 indexing (`-1 → 1`, `n → n-2`), repeated for far overhangs.
pub fn reflect_index(idx: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = idx.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Reflected source index of every tap, `n × window`, row-major.
fn tap_table(n: usize, window: usize) -> Vec<usize> {
    let half = (window / 2) as isize;
    (0..n as isize)
        .flat_map(|i| (-half..=half).map(move |a| reflect_index(i + a, n)))
        .collect()
}

fn pool_axis(src: &Grid, window: usize, along_rows: bool) -> Grid {
    let (rows, cols) = src.shape();
    let scale = 1.0 / window as f64;
    let mut out = Grid::zeros(rows, cols);
    let s = src.as_slice();
    let o = out.as_mut_slice();
    if along_rows {
        let taps = tap_table(rows, window);
        for i in 0..rows {
            let row = &mut o[i * cols..(i + 1) * cols];
            for &k in &taps[i * window..(i + 1) * window] {
                for (a, b) in row.iter_mut().zip(&s[k * cols..(k + 1) * cols]) {
                    *a += b;
                }
            }
            row.iter_mut().for_each(|v| *v *= scale);
        }
    } else {
        let taps = tap_table(cols, window);
        for i in 0..rows {
            let src_row = &s[i * cols..(i + 1) * cols];
            for j in 0..cols {
                let sum: f64 = taps[j * window..(j + 1) * window].iter().map(|&k| src_row[k]).sum();
                o[i * cols + j] = sum * scale;
            }
        }
    }
    out
}

fn pool_axis_adjoint(g: &Grid, window: usize, along_rows: bool) -> Grid {
    let (rows, cols) = g.shape();
    let scale = 1.0 / window as f64;
    let mut out = Grid::zeros(rows, cols);
    let s = g.as_slice();
    let o = out.as_mut_slice();
    if along_rows {
        let taps = tap_table(rows, window);
        for i in 0..rows {
            let src_row = &s[i * cols..(i + 1) * cols];
            for &k in &taps[i * window..(i + 1) * window] {
                for (a, b) in o[k * cols..(k + 1) * cols].iter_mut().zip(src_row) {
                    *a += b * scale;
                }
            }
        }
    } else {
        let taps = tap_table(cols, window);
        for i in 0..rows {
            for j in 0..cols {
                let v = s[i * cols + j] * scale;
                for &k in &taps[j * window..(j + 1) * window] {
                    o[i * cols + k] += v;
                }
            }
        }
    }
    out
}

/// Window-by-window average pooling with reflect padding.
pub fn box_mean(map: &Grid, window: usize) -> Grid {
    pool_axis(&pool_axis(map, window, false), window, true)
}

fn box_mean_adjoint(g: &Grid, window: usize) -> Grid {
    pool_axis_adjoint(&pool_axis_adjoint(g, window, true), window, false)
}

struct LocalStats {
    mean: Grid,
    var: Grid,
}

impl LocalStats {
    fn of(map: &Grid, window: usize) -> Self {
        let mean = box_mean(map, window);
        let sq = box_mean(&map.map(|v| v * v), window);
        let var = sq.zip_map(&mean, |m2, m| (m2 - m * m).max(0.0)).unwrap();
        LocalStats { mean, var }
    }

    fn threshold(&self, w: f64) -> Grid {
        self.mean.zip_map(&self.var, |m, v| m + w * v.sqrt()).unwrap()
    }
}

/// `τ = μ + w·σ` from local window statistics.
pub fn adaptive_threshold(map: &Grid, config: &TcrConfig) -> Grid {
    LocalStats::of(map, config.window).threshold(config.w)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// `sigmoid(α·(map − τ))`, elementwise.
pub fn probability_map(map: &Grid, threshold: &Grid, alpha: f64) -> Result<Grid> {
    map.zip_map(threshold, |x, t| sigmoid(alpha * (x - t)))
}

#[inline]
fn pow(x: f64, gamma: f64) -> f64 {
    if gamma == gamma.trunc() && gamma.abs() < 64.0 {
        x.powi(gamma as i32)
    } else {
        x.powf(gamma)
    }
}

/// Focal cross-entropy of a predicted probability against a target one.
pub fn focal_term(p: f64, p_hat: f64, gamma: f64) -> f64 {
    let q = p_hat.clamp(EPS, 1.0 - EPS);
    -(p * pow(1.0 - q, gamma) * q.ln() + (1.0 - p) * pow(q, gamma) * (1.0 - q).ln())
}

/// Derivative of [`focal_term`] with respect to `p_hat`; zero where clamped.
fn focal_term_grad(p: f64, p_hat: f64, gamma: f64) -> f64 {
    if !(EPS..=1.0 - EPS).contains(&p_hat) {
        return 0.0;
    }
    let q = p_hat;
    let (lq, l1q) = (q.ln(), (1.0 - q).ln());
    let mut pos = pow(1.0 - q, gamma) / q;
    let mut neg = -pow(q, gamma) / (1.0 - q);
    if gamma != 0.0 {
        pos -= gamma * pow(1.0 - q, gamma - 1.0) * lq;
        neg += gamma * pow(q, gamma - 1.0) * l1q;
    }
    -(p * pos + (1.0 - p) * neg)
}

/// Mean focal consistency loss between the probability maps of a
/// reconstruction and its ground truth.
pub fn tcr(x0_hat: &Grid, x0: &Grid, config: &TcrConfig) -> Result<f64> {
    x0_hat.check_shape(x0)?;
    let p = probability_map(x0, &adaptive_threshold(x0, config), config.alpha)?;
    let p_hat = probability_map(x0_hat, &adaptive_threshold(x0_hat, config), config.alpha)?;
    let total: f64 = p
        .as_slice()
        .iter()
        .zip(p_hat.as_slice())
        .map(|(&p, &q)| focal_term(p, q, config.gamma))
        .sum();
    let loss = total / p.len() as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("tcr loss is {loss}")));
    }
    Ok(loss)
}

/// Loss and its gradient with respect to `x0_hat`.
pub fn tcr_with_grad(x0_hat: &Grid, x0: &Grid, config: &TcrConfig) -> Result<(f64, Grid)> {
    x0_hat.check_shape(x0)?;
    let n = x0.len() as f64;
    let alpha = config.alpha;
    let p = probability_map(x0, &adaptive_threshold(x0, config), alpha)?;
    let stats = LocalStats::of(x0_hat, config.window);
    let tau = stats.threshold(config.w);
    let p_hat = probability_map(x0_hat, &tau, alpha)?;

    let mut total = 0.0;
    // dL/dz where z = α(x̂ − τ)
    let mut g_z = Grid::zeros(x0.rows(), x0.cols());
    for ((&pt, &q), gz) in p.as_slice().iter().zip(p_hat.as_slice()).zip(g_z.as_mut_slice()) {
        total += focal_term(pt, q, config.gamma);
        *gz = focal_term_grad(pt, q, config.gamma) * q * (1.0 - q) / n;
    }
    let loss = total / n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("tcr loss is {loss}")));
    }

    // τ = μ + w·√(E[x²] − μ²); route dL/dτ into the two pooled moments.
    let mut g_mean = Grid::zeros(x0.rows(), x0.cols());
    let mut g_sq = Grid::zeros(x0.rows(), x0.cols());
    for idx in 0..x0.len() {
        let g_tau = -alpha * g_z.as_slice()[idx];
        let v = stats.var.as_slice()[idx];
        if config.w != 0.0 && v > 0.0 {
            let s = v.sqrt();
            let m = stats.mean.as_slice()[idx];
            g_mean.as_mut_slice()[idx] = g_tau * (1.0 - config.w * m / s);
            g_sq.as_mut_slice()[idx] = g_tau * config.w / (2.0 * s);
        } else {
            // σ = 0 is a kink of the square root; use the one-sided zero slope.
            g_mean.as_mut_slice()[idx] = g_tau;
        }
    }
    let from_mean = box_mean_adjoint(&g_mean, config.window);
    let from_sq = box_mean_adjoint(&g_sq, config.window);
    let mut grad = g_z.map(|g| alpha * g);
    for (idx, g) in grad.as_mut_slice().iter_mut().enumerate() {
        *g += from_mean.as_slice()[idx] + 2.0 * x0_hat.as_slice()[idx] * from_sq.as_slice()[idx];
    }
    Ok((loss, grad))
}
