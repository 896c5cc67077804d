use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RadarGeometry;

/// Physical and evaluation properties of one object class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSpec {
    pub name: String,
    /// Typical extent along the range axis, meters.
    pub extent_range: f64,
    /// Typical cross-range extent, meters.
    pub extent_azimuth: f64,
    /// Amplitude factor this class imposes on objects it occludes.
    pub occlusion: f64,
    /// OLS tolerance factor.
    pub ols_kappa: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassCatalog {
    classes: Vec<ClassSpec>,
}

impl Default for ClassCatalog {
    fn default() -> Self {
        let spec = |name: &str, lr, lt, occ, kappa| ClassSpec {
            name: name.to_string(),
            extent_range: lr,
            extent_azimuth: lt,
            occlusion: occ,
            ols_kappa: kappa,
        };
        ClassCatalog {
            classes: vec![
                spec("pedestrian", 0.6, 0.6, 0.8, 0.05),
                spec("cyclist", 1.8, 0.8, 0.7, 0.08),
                spec("car", 4.0, 1.8, 0.5, 0.12),
            ],
        }
    }
}

impl ClassCatalog {
    pub fn new(classes: Vec<ClassSpec>) -> Result<Self> {
        let c = ClassCatalog { classes };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("class catalog is empty".into()));
        }
        for c in &self.classes {
            for (field, v) in [
                ("extent_range", c.extent_range),
                ("extent_azimuth", c.extent_azimuth),
                ("ols_kappa", c.ols_kappa),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Config(format!("{}: {field} = {v} must be > 0", c.name)));
                }
            }
            if !(c.occlusion > 0.0 && c.occlusion <= 1.0) {
                return Err(Error::Config(format!(
                    "{}: occlusion = {} must be in (0, 1]",
                    c.name, c.occlusion
                )));
            }
        }
        for (k, c) in self.classes.iter().enumerate() {
            if self.classes[..k].iter().any(|o| o.name == c.name) {
                return Err(Error::Config(format!("duplicate class name {}", c.name)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn get(&self, class_id: usize) -> Option<&ClassSpec> {
        self.classes.get(class_id)
    }

    pub fn spec(&self, class_id: usize) -> Result<&ClassSpec> {
        self.classes.get(class_id).ok_or_else(|| {
            Error::domain(
                "class_id",
                class_id as f64,
                format!("[0, {})", self.classes.len()),
            )
        })
    }

    pub fn id_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ClassSpec> {
        self.classes.iter()
    }
}

/// One annotated object in polar coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Annotation {
    /// Meters.
    pub range: f64,
    /// Radians, positive to the right of boresight.
    pub azimuth: f64,
    pub class_id: usize,
}

impl Annotation {
    pub fn new(range: f64, azimuth: f64, class_id: usize) -> Self {
        Annotation {
            range,
            azimuth,
            class_id,
        }
    }

    pub fn validate(&self, geometry: &RadarGeometry, catalog: &ClassCatalog) -> Result<()> {
        if !(self.range > 0.0 && self.range <= geometry.r_max) {
            return Err(Error::domain(
                "range",
                self.range,
                format!("(0, {}]", geometry.r_max),
            ));
        }
        if !(self.azimuth.abs() <= geometry.theta_max) {
            return Err(Error::domain(
                "azimuth",
                self.azimuth,
                format!("[-{0}, {0}]", geometry.theta_max),
            ));
        }
        catalog.spec(self.class_id)?;
        Ok(())
    }
}
