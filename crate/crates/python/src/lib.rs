//! Python bindings: geometry, conditioning, diffusion, TCR and evaluation.
//!
//! Grids cross the boundary as lists of rows; ConfMaps as lists of channels.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use ramap_forge::conditioning::{build_confmap, GacConfig};
use ramap_forge::diffusion::{
    forward_noise, load_checkpoint, reconstruct_x0, sample, save_checkpoint, train, AdamState,
    Denoiser as CoreDenoiser, DenoiserSpec, DiffusionSchedule, OptimizerConfig, TrainingPair,
};
use ramap_forge::eval::{average_precision, ols_polar, psnr_grid, Detection as CoreDetection};
use ramap_forge::tcr::{adaptive_threshold, probability_map, tcr, TcrConfig};
use ramap_forge::{
    Annotation as CoreAnnotation, ClassCatalog, ConfMap, Error, Grid, RadarGeometry, SeededRng,
};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_grid(rows: Vec<Vec<f64>>) -> PyResult<Grid> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n_cols) {
        return Err(PyValueError::new_err("ragged grid"));
    }
    Grid::from_vec(n_rows, n_cols, rows.concat()).map_err(py_err)
}

fn from_grid(g: &Grid) -> Vec<Vec<f64>> {
    (0..g.rows()).map(|i| g.row(i).to_vec()).collect()
}

fn to_confmap(geometry: &RadarGeometry, channels: Vec<Vec<Vec<f64>>>) -> PyResult<ConfMap> {
    let grids = channels.into_iter().map(to_grid).collect::<PyResult<Vec<_>>>()?;
    ConfMap::new(*geometry, grids).map_err(py_err)
}

#[pyclass(name = "Geometry", frozen)]
struct Geometry(RadarGeometry);

#[pymethods]
impl Geometry {
    #[new]
    #[pyo3(signature = (n_range=128, n_azimuth=128, r_max=50.0, theta_max=std::f64::consts::FRAC_PI_3))]
    fn new(n_range: usize, n_azimuth: usize, r_max: f64, theta_max: f64) -> PyResult<Self> {
        RadarGeometry::new(n_range, n_azimuth, r_max, theta_max).map(Geometry).map_err(py_err)
    }

    #[getter]
    fn n_range(&self) -> usize {
        self.0.n_range
    }

    #[getter]
    fn n_azimuth(&self) -> usize {
        self.0.n_azimuth
    }

    #[getter]
    fn delta_r(&self) -> f64 {
        self.0.delta_r()
    }

    #[getter]
    fn delta_theta(&self) -> f64 {
        self.0.delta_theta()
    }

    fn bin_of(&self, range: f64, azimuth: f64) -> PyResult<(usize, usize)> {
        self.0.bin_of(range, azimuth).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Geometry(n_range={}, n_azimuth={}, r_max={}, theta_max={})",
            self.0.n_range, self.0.n_azimuth, self.0.r_max, self.0.theta_max
        )
    }
}

#[pyclass(name = "Annotation", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Annotation(CoreAnnotation);

#[pymethods]
impl Annotation {
    #[new]
    fn new(range: f64, azimuth: f64, class_id: usize) -> Self {
        Annotation(CoreAnnotation::new(range, azimuth, class_id))
    }

    #[getter]
    fn range(&self) -> f64 {
        self.0.range
    }

    #[getter]
    fn azimuth(&self) -> f64 {
        self.0.azimuth
    }

    #[getter]
    fn class_id(&self) -> usize {
        self.0.class_id
    }
}

#[pyclass(name = "Detection", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Detection(CoreDetection);

#[pymethods]
impl Detection {
    #[new]
    fn new(range: f64, azimuth: f64, class_id: usize, score: f64) -> Self {
        Detection(CoreDetection { range, azimuth, class_id, score })
    }

    #[getter]
    fn score(&self) -> f64 {
        self.0.score
    }
}

fn annotations(list: Vec<PyRef<'_, Annotation>>) -> Vec<CoreAnnotation> {
    list.iter().map(|a| a.0).collect()
}

/// Class names in channel order.
#[pyfunction]
fn class_names() -> Vec<String> {
    ClassCatalog::default().iter().map(|c| c.name.clone()).collect()
}

/// Per-class ConfMap for one frame, GAC-corrected unless `gac` is false.
#[pyfunction]
#[pyo3(signature = (objects, geometry, gac=true))]
fn confmap(objects: Vec<PyRef<'_, Annotation>>, geometry: &Geometry, gac: bool) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let cfg = GacConfig::default();
    let map = build_confmap(&annotations(objects), &geometry.0, &ClassCatalog::default(), gac.then_some(&cfg))
        .map_err(py_err)?;
    Ok(map.channels().iter().map(from_grid).collect())
}

#[pyclass(name = "Schedule", frozen)]
struct Schedule(DiffusionSchedule);

#[pymethods]
impl Schedule {
    #[new]
    #[pyo3(signature = (steps=100, beta_start=1e-4, beta_end=0.02))]
    fn new(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        DiffusionSchedule::linear(steps, beta_start, beta_end).map(Schedule).map_err(py_err)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.0.check_t(t).map_err(py_err)?;
        Ok(self.0.alpha_bar(t))
    }

    fn forward_noise(&self, x0: Vec<Vec<f64>>, t: usize, noise: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let out = forward_noise(&to_grid(x0)?, t, &to_grid(noise)?, &self.0).map_err(py_err)?;
        Ok(from_grid(&out))
    }

    fn reconstruct_x0(&self, x_t: Vec<Vec<f64>>, t: usize, eps_pred: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let out = reconstruct_x0(&to_grid(x_t)?, t, &to_grid(eps_pred)?, &self.0).map_err(py_err)?;
        Ok(from_grid(&out))
    }
}

#[pyclass(name = "Denoiser")]
struct Denoiser {
    net: CoreDenoiser,
    state: AdamState,
}

#[pymethods]
impl Denoiser {
    #[new]
    #[pyo3(signature = (seed=0, cond_channels=3))]
    fn new(seed: u64, cond_channels: usize) -> PyResult<Self> {
        let spec = DenoiserSpec { cond_channels, ..DenoiserSpec::default() };
        let net = CoreDenoiser::new(spec, &mut SeededRng::new(seed)).map_err(py_err)?;
        let state = AdamState::new(net.param_count());
        Ok(Denoiser { net, state })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (net, state) = load_checkpoint(path).map_err(py_err)?;
        Ok(Denoiser { net, state })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.net, &self.state, path).map_err(py_err)
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// Trains on `(x0, confmap)` pairs and returns the per-step losses.
    #[pyo3(signature = (geometry, pairs, schedule, steps, lr=1e-3, lambda_tcr=0.1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        py: Python<'_>,
        geometry: &Geometry,
        pairs: Vec<(Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)>,
        schedule: &Schedule,
        steps: usize,
        lr: f64,
        lambda_tcr: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let data = pairs
            .into_iter()
            .map(|(x0, c)| Ok(TrainingPair { x0: to_grid(x0)?, confmap: to_confmap(&geometry.0, c)? }))
            .collect::<PyResult<Vec<_>>>()?;
        let opt = OptimizerConfig { lr, epochs: usize::MAX, max_steps: Some(steps), ..Default::default() };
        let tcfg = TcrConfig { lambda_tcr, ..TcrConfig::default() };
        let (net, state) = (&mut self.net, &mut self.state);
        let report = py
            .detach(|| train(net, state, &data, &schedule.0, &opt, &tcfg, &mut SeededRng::new(seed)))
            .map_err(py_err)?;
        Ok(report.losses)
    }

    /// Runs the reverse chain for one ConfMap; returns the clamped RAMap.
    #[pyo3(signature = (geometry, confmap, schedule, seed=0))]
    fn sample(
        &self,
        py: Python<'_>,
        geometry: &Geometry,
        confmap: Vec<Vec<Vec<f64>>>,
        schedule: &Schedule,
        seed: u64,
    ) -> PyResult<Vec<Vec<f64>>> {
        let conf = to_confmap(&geometry.0, confmap)?;
        let map = py
            .detach(|| sample(&conf, &self.net, &schedule.0, &mut SeededRng::new(seed)))
            .map_err(py_err)?;
        Ok(from_grid(map.grid()))
    }
}

/// TCR loss between a reconstruction and its target with default settings
/// unless overridden.
#[pyfunction]
#[pyo3(signature = (x0_hat, x0, window=9, w=3.0, alpha=10.0, gamma=2.0))]
fn tcr_loss(x0_hat: Vec<Vec<f64>>, x0: Vec<Vec<f64>>, window: usize, w: f64, alpha: f64, gamma: f64) -> PyResult<f64> {
    let cfg = TcrConfig { window, w, alpha, gamma, ..TcrConfig::default() };
    cfg.validate().map_err(py_err)?;
    tcr(&to_grid(x0_hat)?, &to_grid(x0)?, &cfg).map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (map, window=9, w=3.0, alpha=10.0))]
fn probability(map: Vec<Vec<f64>>, window: usize, w: f64, alpha: f64) -> PyResult<Vec<Vec<f64>>> {
    let cfg = TcrConfig { window, w, alpha, ..TcrConfig::default() };
    cfg.validate().map_err(py_err)?;
    let g = to_grid(map)?;
    let p = probability_map(&g, &adaptive_threshold(&g, &cfg), alpha).map_err(py_err)?;
    Ok(from_grid(&p))
}

#[pyfunction]
#[pyo3(signature = (reference, estimate, a_max=1.0))]
fn psnr(reference: Vec<Vec<f64>>, estimate: Vec<Vec<f64>>, a_max: f64) -> PyResult<f64> {
    psnr_grid(&to_grid(reference)?, &to_grid(estimate)?, a_max).map_err(py_err)
}

#[pyfunction]
fn ols(pred: (f64, f64), gt: (f64, f64), kappa: f64) -> PyResult<f64> {
    ols_polar(pred, gt, kappa).map_err(py_err)
}

/// AP of one class at one OLS threshold; `None` when the class has neither
/// ground truths nor predictions.
#[pyfunction]
fn ap(
    preds: Vec<Vec<PyRef<'_, Detection>>>,
    gts: Vec<Vec<PyRef<'_, Annotation>>>,
    class_id: usize,
    tau: f64,
    kappa: f64,
) -> PyResult<Option<f64>> {
    let preds: Vec<Vec<CoreDetection>> = preds.into_iter().map(|f| f.iter().map(|d| d.0).collect()).collect();
    let gts: Vec<Vec<CoreAnnotation>> = gts.into_iter().map(annotations).collect();
    average_precision(&preds, &gts, class_id, tau, kappa).map_err(py_err)
}

/// Runs the command-line interface in-process and returns its exit code.
#[pyfunction]
fn run_cli(args: Vec<String>) -> i32 {
    ramap_forge::cli::run(std::iter::once("ramap-forge".to_string()).chain(args))
}

#[pymodule]
fn ramap_forge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Geometry>()?;
    m.add_class::<Annotation>()?;
    m.add_class::<Detection>()?;
    m.add_class::<Schedule>()?;
    m.add_class::<Denoiser>()?;
    m.add_function(wrap_pyfunction!(class_names, m)?)?;
    m.add_function(wrap_pyfunction!(confmap, m)?)?;
    m.add_function(wrap_pyfunction!(tcr_loss, m)?)?;
    m.add_function(wrap_pyfunction!(probability, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add_function(wrap_pyfunction!(ap, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
