//! 8-bit PGM/PPM rasters of maps. Range increases upward, azimuth left to
//! right; values map linearly with `round(255·v)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::maps::{ConfMap, RAMap};

fn level(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Image rows from the top, i.e. range bins from the far end.
fn rows_top_down(grid: &Grid) -> impl Iterator<Item = &[f64]> {
    (0..grid.rows()).rev().map(move |i| grid.row(i))
}

pub fn ramap_pgm(map: &RAMap) -> Vec<u8> {
    let g = map.grid();
    let mut out = format!("P5\n{} {}\n255\n", g.cols(), g.rows()).into_bytes();
    for row in rows_top_down(g) {
        out.extend(row.iter().map(|&v| level(v)));
    }
    out
}

/// Channels 0, 1, 2 become red, green and blue.
pub fn confmap_ppm(map: &ConfMap) -> Result<Vec<u8>> {
    let n = map.n_channels();
    if n > 3 {
        return Err(Error::Shape(format!("cannot render {n} channels as RGB")));
    }
    let (rows, cols) = (map.geometry().n_range, map.geometry().n_azimuth);
    let mut out = format!("P6\n{cols} {rows}\n255\n").into_bytes();
    for i in (0..rows).rev() {
        for j in 0..cols {
            for c in 0..3 {
                out.push(if c < n { level(map.channel(c).get(i, j)) } else { 0 });
            }
        }
    }
    Ok(out)
}

pub fn write_image(bytes: &[u8], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
