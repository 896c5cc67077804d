//! Geometry-aware amplitude correction of confidence-map footprints:
//! inverse-square distance loss, antenna gain, and occlusion by nearer objects.

use serde::{Deserialize, Serialize};

use crate::catalog::{Annotation, ClassCatalog};
use crate::confmap::{footprint_of, rasterize, GaussianFootprint};
use crate::error::{Error, Result};
use crate::geometry::RadarGeometry;
use crate::maps::ConfMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AntennaModel {
    /// `cos(θ)^exponent`.
    Cosine { exponent: f64 },
    /// `(angle in degrees, linear gain)` pairs, linearly interpolated.
    Table(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GacConfig {
    /// Range at which distance attenuation equals one, meters.
    pub r_ref: f64,
    pub antenna: AntennaModel,
    /// Angular window within which a nearer object occludes, radians.
    pub occlusion_window: f64,
}

impl Default for GacConfig {
    fn default() -> Self {
        GacConfig {
            r_ref: 5.0,
            antenna: AntennaModel::Cosine { exponent: 2.0 },
            occlusion_window: 5f64.to_radians(),
        }
    }
}

impl GacConfig {
    pub fn validate(&self, geometry: &RadarGeometry) -> Result<()> {
        if !(self.r_ref.is_finite() && self.r_ref > 0.0) {
            return Err(Error::Config(format!("gac.r_ref = {} must be > 0", self.r_ref)));
        }
        if !(self.occlusion_window.is_finite() && self.occlusion_window > 0.0) {
            return Err(Error::Config(format!(
                "gac.occlusion_window = {} must be > 0",
                self.occlusion_window
            )));
        }
        match &self.antenna {
            AntennaModel::Cosine { exponent } => {
                if !(exponent.is_finite() && *exponent >= 0.0) {
                    return Err(Error::Config(format!(
                        "antenna exponent {exponent} must be >= 0"
                    )));
                }
            }
            AntennaModel::Table(rows) => {
                if rows.len() < 2 {
                    return Err(Error::Config("antenna table needs at least two rows".into()));
                }
                for w in rows.windows(2) {
                    if !(w[0].0 < w[1].0) {
                        return Err(Error::Config("antenna table must be sorted by angle".into()));
                    }
                }
                if let Some((a, g)) = rows.iter().find(|(_, g)| !(*g > 0.0 && *g <= 1.0)) {
                    return Err(Error::Config(format!(
                        "antenna gain {g} at {a} deg must be in (0, 1]"
                    )));
                }
                let lo = rows[0].0.to_radians();
                let hi = rows[rows.len() - 1].0.to_radians();
                if lo > -geometry.theta_max + 1e-12 || hi < geometry.theta_max - 1e-12 {
                    return Err(Error::Config(format!(
                        "antenna table [{}, {}] deg does not cover the field of view",
                        rows[0].0,
                        rows[rows.len() - 1].0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// `min(1, (r_ref / r)²)`.
pub fn distance_attenuation(r: f64, config: &GacConfig) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::domain("range", r, "(0, inf)"));
    }
    let q = config.r_ref / r;
    Ok((q * q).min(1.0))
}

pub fn antenna_gain(theta: f64, config: &GacConfig) -> Result<f64> {
    match &config.antenna {
        AntennaModel::Cosine { exponent } => {
            if !(theta.abs() <= std::f64::consts::FRAC_PI_2) {
                return Err(Error::domain("azimuth", theta, "[-pi/2, pi/2]"));
            }
            Ok(theta.cos().powf(*exponent))
        }
        AntennaModel::Table(rows) => {
            let deg = theta.to_degrees();
            let (first, last) = (rows[0].0, rows[rows.len() - 1].0);
            if !(deg >= first && deg <= last) {
                return Err(Error::domain(
                    "azimuth",
                    theta,
                    format!("antenna table [{first}, {last}] deg"),
                ));
            }
            let k = rows.partition_point(|(a, _)| *a <= deg).clamp(1, rows.len() - 1);
            let (a0, g0) = rows[k - 1];
            let (a1, g1) = rows[k];
            let t = (deg - a0) / (a1 - a0);
            Ok(g0 + t * (g1 - g0))
        }
    }
}

/// Occlusion factor per annotation: the product of the occlusion coefficients
/// of every strictly nearer object within the angular window.
pub fn occlusion_factors(
    annotations: &[Annotation],
    config: &GacConfig,
    catalog: &ClassCatalog,
) -> Result<Vec<f64>> {
    annotations
        .iter()
        .map(|q| {
            annotations
                .iter()
                .filter(|p| {
                    p.range < q.range && (p.azimuth - q.azimuth).abs() < config.occlusion_window
                })
                .try_fold(1.0, |acc, p| Ok(acc * catalog.spec(p.class_id)?.occlusion))
        })
        .collect()
}

/// Scales each footprint's peak by distance, antenna and occlusion factors.
/// `footprints[k]` must belong to `annotations[k]`.
pub fn apply_gac(
    footprints: &[GaussianFootprint],
    annotations: &[Annotation],
    config: &GacConfig,
    catalog: &ClassCatalog,
) -> Result<Vec<GaussianFootprint>> {
    if footprints.len() != annotations.len() {
        return Err(Error::Shape(format!(
            "{} footprints for {} annotations",
            footprints.len(),
            annotations.len()
        )));
    }
    let occlusion = occlusion_factors(annotations, config, catalog)?;
    footprints
        .iter()
        .zip(annotations)
        .zip(occlusion)
        .map(|((fp, a), occ)| {
            let gain = distance_attenuation(a.range, config)? * antenna_gain(a.azimuth, config)?;
            let peak = gain * occ * fp.peak;
            if !(peak > 0.0) {
                return Err(Error::Numeric(format!(
                    "corrected peak {peak} for object at r={} theta={}",
                    a.range, a.azimuth
                )));
            }
            Ok(GaussianFootprint { peak, ..*fp })
        })
        .collect()
}

/// Per-class rasterization in catalog channel order.
pub fn assemble(
    footprints: &[GaussianFootprint],
    geometry: &RadarGeometry,
    catalog: &ClassCatalog,
) -> Result<ConfMap> {
    rasterize(footprints, geometry, catalog.len())
}

/// Footprints for a frame, GAC-corrected when `gac` is given and with unit
/// peaks otherwise.
pub fn frame_footprints(
    annotations: &[Annotation],
    geometry: &RadarGeometry,
    catalog: &ClassCatalog,
    gac: Option<&GacConfig>,
) -> Result<Vec<GaussianFootprint>> {
    let base = annotations
        .iter()
        .map(|a| footprint_of(a, catalog, geometry))
        .collect::<Result<Vec<_>>>()?;
    match gac {
        Some(cfg) => apply_gac(&base, annotations, cfg, catalog),
        None => Ok(base),
    }
}

/// Annotation list to conditioning tensor in one call.
pub fn build_confmap(
    annotations: &[Annotation],
    geometry: &RadarGeometry,
    catalog: &ClassCatalog,
    gac: Option<&GacConfig>,
) -> Result<ConfMap> {
    let fps = frame_footprints(annotations, geometry, catalog, gac)?;
    assemble(&fps, geometry, catalog)
}
