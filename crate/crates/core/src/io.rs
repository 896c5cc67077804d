//! Little-endian binary raster formats.
//!
//! ```text
//! RAMap:   "RAMF" u16 version u32 n_range u32 n_azimuth f32 r_max f32 theta_max
//!          f32 raw_max_amplitude, then n_range*n_azimuth f32 (range-major)
//! ConfMap: "CNFM" same header, then u32 n_channels, then channels contiguous
//! ```
//!
//! Values are held as `f64` in memory and narrowed to `f32` on write, so a
//! map read from disk writes back byte-for-byte.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RadarGeometry;
use crate::grid::Grid;
use crate::maps::{ConfMap, RAMap};

pub const RAMAP_MAGIC: &[u8; 4] = b"RAMF";
pub const CONFMAP_MAGIC: &[u8; 4] = b"CNFM";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 4 + 4 + 4;

pub fn encode_ramap(map: &RAMap) -> Vec<u8> {
    let g = map.geometry();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * g.cells());
    put_header(&mut out, RAMAP_MAGIC, g, map.raw_max_amplitude());
    put_f32s(&mut out, map.grid().as_slice());
    out
}

pub fn decode_ramap(bytes: &[u8]) -> Result<RAMap> {
    let mut r = Reader::new(bytes);
    let (geometry, raw_max) = read_header(&mut r, RAMAP_MAGIC)?;
    let grid = read_grid(&mut r, &geometry)?;
    r.finish()?;
    RAMap::new(geometry, grid, raw_max).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_confmap(map: &ConfMap) -> Vec<u8> {
    let g = map.geometry();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 + 4 * g.cells() * map.n_channels());
    put_header(&mut out, CONFMAP_MAGIC, g, 1.0);
    out.extend_from_slice(&(map.n_channels() as u32).to_le_bytes());
    for ch in map.channels() {
        put_f32s(&mut out, ch.as_slice());
    }
    out
}

pub fn decode_confmap(bytes: &[u8]) -> Result<ConfMap> {
    let mut r = Reader::new(bytes);
    let (geometry, _) = read_header(&mut r, CONFMAP_MAGIC)?;
    let n_channels = r.u32()? as usize;
    let mut channels = Vec::with_capacity(n_channels.min(1024));
    for _ in 0..n_channels {
        channels.push(read_grid(&mut r, &geometry)?);
    }
    r.finish()?;
    ConfMap::new(geometry, channels).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_ramap(map: &RAMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_ramap(map)).map_err(|e| Error::io(path, e))
}

pub fn read_ramap(path: impl AsRef<Path>) -> Result<RAMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ramap(&bytes).map_err(|e| in_file(path, e))
}

pub fn write_confmap(map: &ConfMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_confmap(map)).map_err(|e| Error::io(path, e))
}

pub fn read_confmap(path: impl AsRef<Path>) -> Result<ConfMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_confmap(&bytes).map_err(|e| in_file(path, e))
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

fn put_header(out: &mut Vec<u8>, magic: &[u8; 4], g: &RadarGeometry, raw_max: f64) {
    out.extend_from_slice(magic);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.n_range as u32).to_le_bytes());
    out.extend_from_slice(&(g.n_azimuth as u32).to_le_bytes());
    out.extend_from_slice(&(g.r_max as f32).to_le_bytes());
    out.extend_from_slice(&(g.theta_max as f32).to_le_bytes());
    out.extend_from_slice(&(raw_max as f32).to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_header(r: &mut Reader<'_>, magic: &[u8; 4]) -> Result<(RadarGeometry, f64)> {
    let got = r.take(4)?;
    if got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(got),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let n_range = r.u32()? as usize;
    let n_azimuth = r.u32()? as usize;
    let r_max = r.finite_f32()?;
    let theta_max = r.finite_f32()?;
    let raw_max = r.finite_f32()?;
    let geometry = RadarGeometry::new(n_range, n_azimuth, r_max, theta_max)
        .map_err(|e| Error::Format(format!("invalid geometry: {e}")))?;
    Ok((geometry, raw_max))
}

fn read_grid(r: &mut Reader<'_>, g: &RadarGeometry) -> Result<Grid> {
    let n = g.cells();
    if r.remaining() < 4 * n {
        return Err(Error::Format(format!(
            "payload truncated: {} bytes left, need {}",
            r.remaining(),
            4 * n
        )));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        data.push(r.finite_f32()?);
    }
    Grid::from_vec(g.n_range, g.n_azimuth, data)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format(format!(
                "unexpected end of data at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn finite_f32(&mut self) -> Result<f64> {
        let at = self.pos;
        let v = f32::from_le_bytes(self.take(4)?.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::Format(format!("non-finite value at byte {at}")));
        }
        Ok(v as f64)
    }

    fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                self.remaining()
            )));
        }
        Ok(())
    }
}
