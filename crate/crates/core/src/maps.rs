use crate::error::{Error, Result};
use crate::geometry::RadarGeometry;
use crate::grid::Grid;

/// Normalized range–azimuth amplitude map.
#[derive(Debug, Clone, PartialEq)]
pub struct RAMap {
    geometry: RadarGeometry,
    grid: Grid,
    raw_max_amplitude: f64,
}

impl RAMap {
    /// Wraps a grid whose cells already lie in `[0, 1]`.
    pub fn new(geometry: RadarGeometry, grid: Grid, raw_max_amplitude: f64) -> Result<Self> {
        check_dims(&geometry, &grid)?;
        if let Some(v) = grid.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain("amplitude", *v, "[0, 1]"));
        }
        if !(raw_max_amplitude.is_finite() && raw_max_amplitude >= 0.0) {
            return Err(Error::domain("raw_max_amplitude", raw_max_amplitude, "[0, inf)"));
        }
        Ok(RAMap {
            geometry,
            grid,
            raw_max_amplitude,
        })
    }

    pub fn zeros(geometry: RadarGeometry) -> Self {
        RAMap {
            grid: Grid::zeros(geometry.n_range, geometry.n_azimuth),
            geometry,
            raw_max_amplitude: 1.0,
        }
    }

    /// Normalizes raw linear magnitudes by their maximum and records the scale.
    pub fn from_raw(geometry: RadarGeometry, raw: Grid) -> Result<Self> {
        check_dims(&geometry, &raw)?;
        if !raw.all_finite() {
            return Err(Error::Numeric("raw amplitudes contain non-finite values".into()));
        }
        let peak = raw.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let grid = if peak > 0.0 { raw.map(|v| v.abs() / peak) } else { raw.map(|_| 0.0) };
        RAMap::new(geometry, grid, peak)
    }

    /// Clamps an arbitrary grid into `[0, 1]`, as done when emitting samples.
    pub fn from_clamped(geometry: RadarGeometry, grid: &Grid) -> Result<Self> {
        check_dims(&geometry, grid)?;
        if !grid.all_finite() {
            return Err(Error::Numeric("grid contains non-finite values".into()));
        }
        RAMap::new(geometry, grid.clamp(0.0, 1.0), 1.0)
    }

    pub fn geometry(&self) -> &RadarGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn into_grid(self) -> Grid {
        self.grid
    }

    pub fn raw_max_amplitude(&self) -> f64 {
        self.raw_max_amplitude
    }
}

/// Per-class conditioning rasters, one channel per catalog entry.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfMap {
    geometry: RadarGeometry,
    channels: Vec<Grid>,
}

impl ConfMap {
    pub fn new(geometry: RadarGeometry, channels: Vec<Grid>) -> Result<Self> {
        for ch in &channels {
            check_dims(&geometry, ch)?;
            if let Some(v) = ch.as_slice().iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::domain("confidence", *v, "[0, 1]"));
            }
        }
        Ok(ConfMap { geometry, channels })
    }

    pub fn zeros(geometry: RadarGeometry, n_channels: usize) -> Self {
        ConfMap {
            channels: vec![Grid::zeros(geometry.n_range, geometry.n_azimuth); n_channels],
            geometry,
        }
    }

    pub fn geometry(&self) -> &RadarGeometry {
        &self.geometry
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn channel(&self, c: usize) -> &Grid {
        &self.channels[c]
    }

    pub fn channels(&self) -> &[Grid] {
        &self.channels
    }

    /// Sum over channels, clamped to one.
    pub fn collapse(&self) -> Grid {
        let mut out = Grid::zeros(self.geometry.n_range, self.geometry.n_azimuth);
        for ch in &self.channels {
            for (o, v) in out.as_mut_slice().iter_mut().zip(ch.as_slice()) {
                *o += v;
            }
        }
        out.clamp(0.0, 1.0)
    }

    /// Indices of channels holding any nonzero cell.
    pub fn nonzero_channels(&self) -> Vec<usize> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, ch)| ch.as_slice().iter().any(|&v| v != 0.0))
            .map(|(c, _)| c)
            .collect()
    }
}

fn check_dims(geometry: &RadarGeometry, grid: &Grid) -> Result<()> {
    if grid.shape() != (geometry.n_range, geometry.n_azimuth) {
        return Err(Error::Shape(format!(
            "grid is {}x{}, geometry expects {}x{}",
            grid.rows(),
            grid.cols(),
            geometry.n_range,
            geometry.n_azimuth
        )));
    }
    Ok(())
}
