//! Conditional diffusion synthesis of FMCW radar range–azimuth maps.
//!
//! Object annotations are rasterized into per-class Gaussian confidence maps,
//! corrected for distance, antenna gain and occlusion, and used to condition
//! a small convolutional DDPM denoiser. Training combines the usual noise
//! MSE with a CFAR-style target-consistency term; outputs are scored with
//! PSNR and OLS-based average precision.

pub mod annotations;
pub mod catalog;
pub mod cli;
pub mod conditioning;
pub mod config;
pub mod confmap;
pub mod dataset;
pub mod diffusion;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod maps;
pub mod render;
pub mod rng;
pub mod tcr;

pub use catalog::{Annotation, ClassCatalog, ClassSpec};
pub use error::{Error, Result};
pub use geometry::RadarGeometry;
pub use grid::Grid;
pub use maps::{ConfMap, RAMap};
pub use rng::SeededRng;
