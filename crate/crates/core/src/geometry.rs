//! Grid discretization of the range–azimuth plane.
//!
//! Range bin `i` covers `[i·Δr, (i+1)·Δr)` and azimuth bin `j` covers
//! `[−θmax + j·Δθ, −θmax + (j+1)·Δθ)`. Bin centers sit in the middle of each
//! cell, so the nearest-center lookup reduces to a floor and every in-domain
//! point is within half a bin of the center it maps to.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadarGeometry {
    pub n_range: usize,
    pub n_azimuth: usize,
    /// Maximum detectable range in meters.
    pub r_max: f64,
    /// Half field of view in radians.
    pub theta_max: f64,
}

impl Default for RadarGeometry {
    fn default() -> Self {
        RadarGeometry {
            n_range: 128,
            n_azimuth: 128,
            r_max: 50.0,
            theta_max: 60f64.to_radians(),
        }
    }
}

impl RadarGeometry {
    pub fn new(n_range: usize, n_azimuth: usize, r_max: f64, theta_max: f64) -> Result<Self> {
        let g = RadarGeometry {
            n_range,
            n_azimuth,
            r_max,
            theta_max,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_range == 0 {
            return Err(Error::domain("n_range", 0.0, "positive integers"));
        }
        if self.n_azimuth == 0 {
            return Err(Error::domain("n_azimuth", 0.0, "positive integers"));
        }
        if !(self.r_max.is_finite() && self.r_max > 0.0) {
            return Err(Error::domain("r_max", self.r_max, "(0, inf)"));
        }
        if !(self.theta_max > 0.0 && self.theta_max <= FRAC_PI_2) {
            return Err(Error::domain("theta_max", self.theta_max, "(0, pi/2]"));
        }
        Ok(())
    }

    /// Range resolution in meters per bin.
    pub fn delta_r(&self) -> f64 {
        self.r_max / self.n_range as f64
    }

    /// Angular resolution in radians per bin.
    pub fn delta_theta(&self) -> f64 {
        2.0 * self.theta_max / self.n_azimuth as f64
    }

    /// Same grid once both sides are narrowed to the on-disk `f32` header.
    pub fn matches(&self, other: &RadarGeometry) -> bool {
        self.n_range == other.n_range
            && self.n_azimuth == other.n_azimuth
            && self.r_max as f32 == other.r_max as f32
            && self.theta_max as f32 == other.theta_max as f32
    }

    pub fn cells(&self) -> usize {
        self.n_range * self.n_azimuth
    }

    pub fn range_bin(&self, range: f64) -> Result<usize> {
        if !(0.0..=self.r_max).contains(&range) {
            return Err(Error::domain(
                "range",
                range,
                format!("[0, {}]", self.r_max),
            ));
        }
        Ok(nearest_bin(range / self.delta_r(), self.n_range))
    }

    pub fn azimuth_bin(&self, azimuth: f64) -> Result<usize> {
        if !(-self.theta_max..=self.theta_max).contains(&azimuth) {
            return Err(Error::domain(
                "azimuth",
                azimuth,
                format!("[-{0}, {0}]", self.theta_max),
            ));
        }
        Ok(nearest_bin(
            (azimuth + self.theta_max) / self.delta_theta(),
            self.n_azimuth,
        ))
    }

    /// Nearest `(range_bin, azimuth_bin)` for a polar position.
    pub fn bin_of(&self, range: f64, azimuth: f64) -> Result<(usize, usize)> {
        Ok((self.range_bin(range)?, self.azimuth_bin(azimuth)?))
    }

    pub fn range_center(&self, bin: usize) -> f64 {
        (bin as f64 + 0.5) * self.delta_r()
    }

    pub fn azimuth_center(&self, bin: usize) -> f64 {
        -self.theta_max + (bin as f64 + 0.5) * self.delta_theta()
    }
}

/// `position` is measured in bin widths from the lower edge. Rounding
/// `position − 0.5` half-up to the nearest center index is a plain floor.
fn nearest_bin(position: f64, n: usize) -> usize {
    (position.floor().max(0.0) as usize).min(n - 1)
}
