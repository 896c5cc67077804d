//! Denoiser checkpoint file.
//!
//! ```text
//! "DNSR" u16 version
//! u32 stages u32 hidden u32 kernel u32 cond_channels
//! u64 parameter count, f32 parameters
//! u64 adam step, f32 first moments, f32 second moments
//! ```

use std::fs;
use std::path::Path;

use super::network::{Denoiser, DenoiserSpec};
use super::train::AdamState;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DNSR";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(denoiser: &Denoiser, state: &AdamState) -> Vec<u8> {
    let spec = denoiser.spec();
    let n = denoiser.param_count();
    let mut out = Vec::with_capacity(38 + 12 * n);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [spec.stages, spec.hidden, spec.kernel, spec.cond_channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for p in denoiser.params() {
        out.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    out.extend_from_slice(&state.step.to_le_bytes());
    for m in state.m.iter().chain(&state.v) {
        out.extend_from_slice(&(*m as f32).to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn floats(&mut self, count: usize) -> Result<Vec<f64>> {
        self.take(4 * count)?
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(Error::Format("non-finite value in checkpoint".into()))
                }
            })
            .collect()
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(Denoiser, AdamState)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let spec = DenoiserSpec {
        stages: cur.u32()? as usize,
        hidden: cur.u32()? as usize,
        kernel: cur.u32()? as usize,
        cond_channels: cur.u32()? as usize,
    };
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    let n = cur.u64()? as usize;
    if n != spec.param_count() {
        return Err(Error::Format(format!(
            "parameter count {n} does not match architecture ({})",
            spec.param_count()
        )));
    }
    let params = cur.floats(n)?;
    let step = cur.u64()?;
    let m = cur.floats(n)?;
    let v = cur.floats(n)?;
    if cur.pos != bytes.len() {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let denoiser = Denoiser::from_params(spec, params).map_err(|e| Error::Format(e.to_string()))?;
    Ok((denoiser, AdamState { step, m, v }))
}

pub fn save_checkpoint(denoiser: &Denoiser, state: &AdamState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(denoiser, state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Denoiser, AdamState)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
