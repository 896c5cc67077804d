//! Gaussian confidence-map rasterization.

use crate::catalog::{Annotation, ClassCatalog};
use crate::error::{Error, Result};
use crate::geometry::RadarGeometry;
use crate::grid::Grid;
use crate::maps::ConfMap;

/// Cells further than this many sigmas from the center (per axis) are skipped.
pub const TRUNCATION_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFootprint {
    pub class_id: usize,
    pub range_bin: usize,
    pub azimuth_bin: usize,
    /// Range-axis spread in bins.
    pub sigma_range: f64,
    /// Azimuth-axis spread in bins.
    pub sigma_azimuth: f64,
    pub peak: f64,
}

impl GaussianFootprint {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_range.is_finite() && self.sigma_range > 0.0) {
            return Err(Error::domain("sigma_range", self.sigma_range, "(0, inf)"));
        }
        if !(self.sigma_azimuth.is_finite() && self.sigma_azimuth > 0.0) {
            return Err(Error::domain("sigma_azimuth", self.sigma_azimuth, "(0, inf)"));
        }
        if !(self.peak > 0.0 && self.peak <= 1.0) {
            return Err(Error::domain("peak", self.peak, "(0, 1]"));
        }
        Ok(())
    }

    /// Unclamped Gaussian value at a cell, zero outside the truncation box.
    pub fn value_at(&self, i: usize, j: usize) -> f64 {
        let di = i as f64 - self.range_bin as f64;
        let dj = j as f64 - self.azimuth_bin as f64;
        if di.abs() > TRUNCATION_SIGMAS * self.sigma_range
            || dj.abs() > TRUNCATION_SIGMAS * self.sigma_azimuth
        {
            return 0.0;
        }
        self.peak
            * (-(di * di) / (2.0 * self.sigma_range * self.sigma_range)
                - (dj * dj) / (2.0 * self.sigma_azimuth * self.sigma_azimuth))
                .exp()
    }

    /// Inclusive index bounds of the truncation box, clipped to the grid.
    pub fn support(&self, rows: usize, cols: usize) -> (usize, usize, usize, usize) {
        let span = |center: usize, sigma: f64, n: usize| {
            let half = (TRUNCATION_SIGMAS * sigma).floor() as usize;
            (center.saturating_sub(half), (center + half).min(n - 1))
        };
        let (i0, i1) = span(self.range_bin, self.sigma_range, rows);
        let (j0, j1) = span(self.azimuth_bin, self.sigma_azimuth, cols);
        (i0, i1, j0, j1)
    }

    /// Adds this footprint's truncated Gaussian to `grid`.
    pub fn splat(&self, grid: &mut Grid) {
        let (i0, i1, j0, j1) = self.support(grid.rows(), grid.cols());
        for i in i0..=i1 {
            for j in j0..=j1 {
                grid.add_at(i, j, self.value_at(i, j));
            }
        }
    }
}

/// Footprint of an annotated object with unit peak. Range spread is the
/// class length in range bins; azimuth spread is the angle the class width
/// subtends at the object's range, in azimuth bins.
pub fn footprint_of(
    annotation: &Annotation,
    catalog: &ClassCatalog,
    geometry: &RadarGeometry,
) -> Result<GaussianFootprint> {
    if !(annotation.range > 0.0) {
        return Err(Error::domain("range", annotation.range, "(0, r_max]"));
    }
    annotation.validate(geometry, catalog)?;
    let class = catalog.spec(annotation.class_id)?;
    let (range_bin, azimuth_bin) = geometry.bin_of(annotation.range, annotation.azimuth)?;
    let sigma_range = class.extent_range / geometry.delta_r();
    let sigma_azimuth =
        (class.extent_azimuth / (2.0 * annotation.range)).atan() / geometry.delta_theta();
    let fp = GaussianFootprint {
        class_id: annotation.class_id,
        range_bin,
        azimuth_bin,
        sigma_range,
        sigma_azimuth,
        peak: 1.0,
    };
    fp.validate()?;
    Ok(fp)
}

/// Renders footprints into one channel per class. Instances of a class are
/// summed and the sum clamped to one; classes never mix.
pub fn rasterize(
    footprints: &[GaussianFootprint],
    geometry: &RadarGeometry,
    n_classes: usize,
) -> Result<ConfMap> {
    let mut sorted = footprints.to_vec();
    for fp in &sorted {
        fp.validate()?;
        if fp.class_id >= n_classes {
            return Err(Error::domain(
                "class_id",
                fp.class_id as f64,
                format!("[0, {n_classes})"),
            ));
        }
        if fp.range_bin >= geometry.n_range || fp.azimuth_bin >= geometry.n_azimuth {
            return Err(Error::Shape(format!(
                "footprint center ({}, {}) outside {}x{} grid",
                fp.range_bin, fp.azimuth_bin, geometry.n_range, geometry.n_azimuth
            )));
        }
    }
    // Fixed accumulation order so the result does not depend on input order.
    sorted.sort_by(|a, b| canonical_key(a).cmp(&canonical_key(b)));

    let mut channels = vec![Grid::zeros(geometry.n_range, geometry.n_azimuth); n_classes];
    for fp in &sorted {
        fp.splat(&mut channels[fp.class_id]);
    }
    for ch in &mut channels {
        for v in ch.as_mut_slice() {
            *v = v.min(1.0);
        }
    }
    ConfMap::new(*geometry, channels)
}

fn canonical_key(fp: &GaussianFootprint) -> (usize, usize, usize, u64, u64, u64) {
    (
        fp.class_id,
        fp.range_bin,
        fp.azimuth_bin,
        fp.sigma_range.to_bits(),
        fp.sigma_azimuth.to_bits(),
        fp.peak.to_bits(),
    )
}
