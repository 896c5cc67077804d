//! Run configuration: one JSON document covering every stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::ClassCatalog;
use crate::conditioning::GacConfig;
use crate::dataset::SceneConfig;
use crate::diffusion::{DenoiserSpec, DiffusionSchedule, OptimizerConfig, ScheduleConfig};
use crate::error::{Error, Result};
use crate::geometry::RadarGeometry;
use crate::tcr::TcrConfig;

/// Peak extraction and suppression settings used when scoring ConfMaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub min_score: f64,
    pub nms_threshold: f64,
    pub max_peaks: usize,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        DetectionConfig {
            min_score: 0.3,
            nms_threshold: 0.5,
            max_peaks: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub geometry: RadarGeometry,
    pub catalog: ClassCatalog,
    pub gac: GacConfig,
    /// Condition on peak-flattened ConfMaps instead of GAC-corrected ones.
    pub disable_gac: bool,
    pub tcr: TcrConfig,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserSpec,
    pub optimizer: OptimizerConfig,
    pub scenes: Vec<SceneConfig>,
    pub split_fraction: f64,
    pub detection: DetectionConfig,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let geometry = RadarGeometry::default();
        let catalog = ClassCatalog::default();
        RunConfig {
            seed: 0,
            scenes: SceneConfig::defaults(&geometry),
            denoiser: DenoiserSpec {
                cond_channels: catalog.len(),
                ..DenoiserSpec::default()
            },
            geometry,
            catalog,
            gac: GacConfig::default(),
            disable_gac: false,
            tcr: TcrConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerConfig::default(),
            split_fraction: 0.8,
            detection: DetectionConfig::default(),
            out_dir: None,
        }
    }
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Config(m),
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks every section; all failures surface as [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        self.geometry.validate().map_err(config_err)?;
        self.catalog.validate().map_err(config_err)?;
        self.gac.validate(&self.geometry).map_err(config_err)?;
        self.tcr.validate().map_err(config_err)?;
        DiffusionSchedule::from_config(&self.schedule).map_err(config_err)?;
        self.denoiser.validate().map_err(config_err)?;
        if self.denoiser.cond_channels != self.catalog.len() {
            return Err(Error::Config(format!(
                "denoiser.cond_channels = {} but the catalog has {} classes",
                self.denoiser.cond_channels,
                self.catalog.len()
            )));
        }
        self.optimizer.validate().map_err(config_err)?;
        for s in &self.scenes {
            s.validate(&self.geometry, &self.catalog).map_err(config_err)?;
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config(format!(
                "split_fraction = {} must lie in (0, 1)",
                self.split_fraction
            )));
        }
        let d = &self.detection;
        if !(d.min_score.is_finite() && (0.0..=1.0).contains(&d.nms_threshold)) {
            return Err(Error::Config("detection thresholds out of range".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<DiffusionSchedule> {
        DiffusionSchedule::from_config(&self.schedule)
    }

    pub fn gac_for_conditioning(&self) -> Option<&GacConfig> {
        (!self.disable_gac).then_some(&self.gac)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_validates_and_round_trips() {
        let c = RunConfig::default();
        c.validate().unwrap();
        let back = RunConfig::parse(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn partial_document_uses_defaults() {
        let c = RunConfig::parse(r#"{"seed": 7}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.geometry, RadarGeometry::default());
        assert_ne!(c.hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse(r#"{"sed": 7}"#), Err(Error::Config(_))));
        assert!(matches!(
            RunConfig::parse(r#"{"tcr": {"windw": 3}}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let mut c = RunConfig::default();
        c.geometry.r_max = -1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.denoiser.cond_channels = 2;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = RunConfig::default();
        c.split_fraction = 1.0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
