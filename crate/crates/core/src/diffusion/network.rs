//! Small convolutional noise predictor with a hand-written backward pass.
//!
//! Input planes are the noisy map, the conditioning channels and a constant
//! plane holding `t / T`. Every stage is a "same" zero-padded convolution;
//! hidden stages are followed by SiLU, the last stage is linear and emits a
//! single noise plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::maps::ConfMap;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSpec {
    /// Number of convolutional stages, at least one.
    pub stages: usize,
    pub hidden: usize,
    /// Odd kernel side.
    pub kernel: usize,
    /// Conditioning channels expected at the input.
    pub cond_channels: usize,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec {
            stages: 3,
            hidden: 8,
            kernel: 3,
            cond_channels: 3,
        }
    }
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::Config("denoiser.stages must be >= 1".into()));
        }
        if self.hidden == 0 && self.stages > 1 {
            return Err(Error::Config("denoiser.hidden must be >= 1".into()));
        }
        if self.kernel == 0 || self.kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "denoiser.kernel = {} must be odd",
                self.kernel
            )));
        }
        Ok(())
    }

    pub fn in_channels(&self) -> usize {
        self.cond_channels + 2
    }

    /// `(in, out)` channel counts per stage.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.stages)
            .map(|l| {
                let cin = if l == 0 { self.in_channels() } else { self.hidden };
                let cout = if l + 1 == self.stages { 1 } else { self.hidden };
                (cin, cout)
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        let kk = self.kernel * self.kernel;
        self.layer_dims()
            .iter()
            .map(|(cin, cout)| cout * cin * kk + cout)
            .sum()
    }
}

/// Anything that predicts the added noise from `(x_t, t, C)`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &Grid, confmap: &ConfMap, t: usize, steps: usize) -> Result<Grid>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    spec: DenoiserSpec,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
pub struct ForwardCache {
    rows: usize,
    cols: usize,
    /// Input planes of each stage.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation planes of each hidden stage.
    preacts: Vec<Vec<f64>>,
}

impl Denoiser {
    /// He-style normal initialization, biases zero.
    pub fn new(spec: DenoiserSpec, rng: &mut SeededRng) -> Result<Self> {
        spec.validate()?;
        let kk = spec.kernel * spec.kernel;
        let mut params = Vec::with_capacity(spec.param_count());
        let dims = spec.layer_dims();
        for (l, &(cin, cout)) in dims.iter().enumerate() {
            let fan_in = (cin * kk) as f64;
            let gain = if l + 1 == dims.len() { 1.0 } else { 2.0 };
            let std = (gain / fan_in).sqrt();
            for _ in 0..cout * cin * kk {
                params.push(std * rng.normal());
            }
            params.extend(std::iter::repeat(0.0).take(cout));
        }
        Ok(Denoiser { spec, params })
    }

    pub fn from_params(spec: DenoiserSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Shape(format!(
                "{} parameters for an architecture with {}",
                params.len(),
                spec.param_count()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite denoiser parameter".into()));
        }
        Ok(Denoiser { spec, params })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn input_planes(&self, x_t: &Grid, confmap: &ConfMap, t: usize, steps: usize) -> Result<Vec<f64>> {
        if confmap.n_channels() != self.spec.cond_channels {
            return Err(Error::Shape(format!(
                "denoiser expects {} conditioning channels, got {}",
                self.spec.cond_channels,
                confmap.n_channels()
            )));
        }
        let g = confmap.geometry();
        if x_t.shape() != (g.n_range, g.n_azimuth) {
            return Err(Error::Shape(format!(
                "x_t is {}x{}, conditioning is {}x{}",
                x_t.rows(),
                x_t.cols(),
                g.n_range,
                g.n_azimuth
            )));
        }
        let n = x_t.len();
        let mut planes = Vec::with_capacity(n * self.spec.in_channels());
        planes.extend_from_slice(x_t.as_slice());
        for ch in confmap.channels() {
            planes.extend_from_slice(ch.as_slice());
        }
        let tau = t as f64 / steps as f64;
        planes.extend(std::iter::repeat(tau).take(n));
        Ok(planes)
    }

    pub fn forward(
        &self,
        x_t: &Grid,
        confmap: &ConfMap,
        t: usize,
        steps: usize,
    ) -> Result<(Grid, ForwardCache)> {
        let (h, w) = x_t.shape();
        let kk = self.spec.kernel * self.spec.kernel;
        let mut cur = self.input_planes(x_t, confmap, t, steps)?;
        let mut inputs = Vec::with_capacity(self.spec.stages);
        let mut preacts = Vec::with_capacity(self.spec.stages.saturating_sub(1));
        let mut offset = 0;
        let dims = self.spec.layer_dims();
        for (l, &(cin, cout)) in dims.iter().enumerate() {
            let nw = cout * cin * kk;
            let weights = &self.params[offset..offset + nw];
            let bias = &self.params[offset + nw..offset + nw + cout];
            offset += nw + cout;
            let mut out = vec![0.0; cout * h * w];
            conv_forward(&cur, cin, h, w, weights, bias, cout, self.spec.kernel, &mut out);
            let last = l + 1 == dims.len();
            let next = if last {
                out.clone()
            } else {
                out.iter().map(|&z| silu(z)).collect()
            };
            inputs.push(std::mem::replace(&mut cur, next));
            if !last {
                preacts.push(out);
            }
        }
        let pred = Grid::from_vec(h, w, cur)?;
        Ok((
            pred,
            ForwardCache {
                rows: h,
                cols: w,
                inputs,
                preacts,
            },
        ))
    }

    /// Accumulates `∂L/∂params` into `grad` given `∂L/∂output`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Grid, grad: &mut [f64]) -> Result<()> {
        let (h, w) = (cache.rows, cache.cols);
        if grad_out.shape() != (h, w) {
            return Err(Error::Shape("output gradient does not match forward pass".into()));
        }
        if grad.len() != self.params.len() {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let kk = self.spec.kernel * self.spec.kernel;
        let dims = self.spec.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(cin, cout) in &dims {
            offsets.push(off);
            off += cout * cin * kk + cout;
        }
        let mut g_out = grad_out.as_slice().to_vec();
        for l in (0..dims.len()).rev() {
            let (cin, cout) = dims[l];
            let nw = cout * cin * kk;
            let o = offsets[l];
            let weights = &self.params[o..o + nw];
            let (gw, gb) = grad[o..o + nw + cout].split_at_mut(nw);
            let mut g_in = if l > 0 { Some(vec![0.0; cin * h * w]) } else { None };
            conv_backward(
                &cache.inputs[l],
                cin,
                h,
                w,
                weights,
                cout,
                self.spec.kernel,
                &g_out,
                gw,
                gb,
                g_in.as_deref_mut(),
            );
            if let Some(mut gi) = g_in {
                for (g, &z) in gi.iter_mut().zip(&cache.preacts[l - 1]) {
                    *g *= silu_grad(z);
                }
                g_out = gi;
            }
        }
        Ok(())
    }
}

impl NoisePredictor for Denoiser {
    fn predict_noise(&self, x_t: &Grid, confmap: &ConfMap, t: usize, steps: usize) -> Result<Grid> {
        Ok(self.forward(x_t, confmap, t, steps)?.0)
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Zero-padded planes laid out with row stride `w + 2r`. Each plane carries
/// `2r` trailing zeros so every tap offset can read a full `h·(w+2r)` run.
struct Padded {
    data: Vec<f64>,
    stride: usize,
    plane: usize,
}

impl Padded {
    fn new(c: usize, h: usize, w: usize, r: usize) -> Self {
        let stride = w + 2 * r;
        let plane = (h + 2 * r) * stride + 2 * r;
        Padded {
            data: vec![0.0; c * plane],
            stride,
            plane,
        }
    }

    /// Copies `c` planes of `h×w` with their top-left corner at `(top, left)`.
    fn fill(&mut self, src: &[f64], c: usize, h: usize, w: usize, top: usize, left: usize) {
        for ch in 0..c {
            for y in 0..h {
                let d = ch * self.plane + (y + top) * self.stride + left;
                self.data[d..d + w].copy_from_slice(&src[(ch * h + y) * w..(ch * h + y + 1) * w]);
            }
        }
    }

    fn channel(&self, ch: usize) -> &[f64] {
        &self.data[ch * self.plane..(ch + 1) * self.plane]
    }
}

/// `acc[j] += Σ_t taps[t] · src[j + offsets[t]]` for every `j` in `acc`.
#[inline]
fn correlate_into(acc: &mut [f64], src: &[f64], taps: &[f64], offsets: &[usize]) {
    let n = acc.len();
    if taps.len() == 9 {
        let s: [&[f64]; 9] = std::array::from_fn(|t| &src[offsets[t]..offsets[t] + n]);
        let w: [f64; 9] = std::array::from_fn(|t| taps[t]);
        for j in 0..n {
            acc[j] += w[0] * s[0][j]
                + w[1] * s[1][j]
                + w[2] * s[2][j]
                + w[3] * s[3][j]
                + w[4] * s[4][j]
                + w[5] * s[5][j]
                + w[6] * s[6][j]
                + w[7] * s[7][j]
                + w[8] * s[8][j];
        }
    } else {
        for (&wv, &off) in taps.iter().zip(offsets) {
            for (a, b) in acc.iter_mut().zip(&src[off..off + n]) {
                *a += wv * b;
            }
        }
    }
}

fn tap_offsets(k: usize, stride: usize) -> Vec<usize> {
    (0..k * k).map(|t| (t / k) * stride + t % k).collect()
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    bias: &[f64],
    cout: usize,
    k: usize,
    out: &mut [f64],
) {
    let r = k / 2;
    let kk = k * k;
    let mut pad = Padded::new(cin, h, w, r);
    pad.fill(input, cin, h, w, r, r);
    let offsets = tap_offsets(k, pad.stride);
    let run = h * pad.stride;
    let mut acc = vec![0.0; run];
    for co in 0..cout {
        acc.fill(bias[co]);
        for ci in 0..cin {
            let taps = &weights[(co * cin + ci) * kk..(co * cin + ci + 1) * kk];
            correlate_into(&mut acc, pad.channel(ci), taps, &offsets);
        }
        for y in 0..h {
            out[(co * h + y) * w..(co * h + y + 1) * w]
                .copy_from_slice(&acc[y * pad.stride..y * pad.stride + w]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    input: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    weights: &[f64],
    cout: usize,
    k: usize,
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    grad_in: Option<&mut [f64]>,
) {
    let r = k / 2;
    let kk = k * k;
    let plane = h * w;
    let mut x_pad = Padded::new(cin, h, w, r);
    x_pad.fill(input, cin, h, w, r, r);
    let mut g_pad = Padded::new(cout, h, w, r);
    g_pad.fill(grad_out, cout, h, w, r, r);
    let stride = x_pad.stride;
    let run = h * stride;
    // g(y, x) sits at j + r·stride + r for j = y·stride + x
    let g_origin = r * stride + r;
    let offsets = tap_offsets(k, stride);

    for co in 0..cout {
        grad_b[co] += grad_out[co * plane..(co + 1) * plane].iter().sum::<f64>();
        let g = &g_pad.channel(co)[g_origin..g_origin + run];
        for ci in 0..cin {
            let xs = x_pad.channel(ci);
            let gw = &mut grad_w[(co * cin + ci) * kk..(co * cin + ci + 1) * kk];
            if kk == 9 {
                let sums = dot9(g, xs, &offsets);
                for (a, b) in gw.iter_mut().zip(sums) {
                    *a += b;
                }
            } else {
                for t in 0..kk {
                    gw[t] += dot(g, &xs[offsets[t]..offsets[t] + run]);
                }
            }
        }
    }

    if let Some(gi) = grad_in {
        // full correlation of the padded output gradient with the flipped kernel
        let mut acc = vec![0.0; run];
        let mut flipped = vec![0.0; kk];
        for ci in 0..cin {
            acc.fill(0.0);
            for co in 0..cout {
                let taps = &weights[(co * cin + ci) * kk..(co * cin + ci + 1) * kk];
                for t in 0..kk {
                    flipped[t] = taps[kk - 1 - t];
                }
                correlate_into(&mut acc, g_pad.channel(co), &flipped, &offsets);
            }
            for y in 0..h {
                let dst = &mut gi[(ci * h + y) * w..(ci * h + y + 1) * w];
                for (d, a) in dst.iter_mut().zip(&acc[y * stride..y * stride + w]) {
                    *d += a;
                }
            }
        }
    }
}

/// Nine dot products of `g` against shifted windows of `src`, in one pass.
fn dot9(g: &[f64], src: &[f64], offsets: &[usize]) -> [f64; 9] {
    let n = g.len();
    let s: [&[f64]; 9] = std::array::from_fn(|t| &src[offsets[t]..offsets[t] + n]);
    let mut acc = [[0.0f64; 4]; 9];
    let full = n / 4 * 4;
    for j in (0..full).step_by(4) {
        let gv = [g[j], g[j + 1], g[j + 2], g[j + 3]];
        for t in 0..9 {
            let x = &s[t][j..j + 4];
            for l in 0..4 {
                acc[t][l] += gv[l] * x[l];
            }
        }
    }
    std::array::from_fn(|t| {
        let mut v = (acc[t][0] + acc[t][1]) + (acc[t][2] + acc[t][3]);
        for j in full..n {
            v += g[j] * s[t][j];
        }
        v
    })
}

/// Dot product with four independent accumulators so it vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}
