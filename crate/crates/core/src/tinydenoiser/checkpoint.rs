//! Checkpoint format, little-endian throughout:
//!
//! ```text
//! [u8; 4]        magic "ASMP"
//! u32            format version (1)
//! u32            number of layers L
//! u32 × (L + 1)  layer widths, input first
//! u32            diffusion step count T
//! f64 × T        ᾱ_1 … ᾱ_T of the training schedule
//! f64 × P        per layer: weights (fan_in × fan_out, row-major), then biases
//! [u8; 32]       SHA-256 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::{Layer, MlpParams, TinyDenoiser};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ASMP";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn write_checkpoint(model: &TinyDenoiser) -> Vec<u8> {
    let dims = model.params.dims();
    let mut buf = Vec::with_capacity(
        16 + 4 * dims.len() + 8 * (model.total_steps() + model.params.num_params()) + DIGEST_LEN,
    );
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(model.params.layers.len() as u32).to_le_bytes());
    for d in &dims {
        buf.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(model.total_steps() as u32).to_le_bytes());
    for v in model.alpha_bars() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for l in &model.params.layers {
        for v in l.w.iter().chain(l.b.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corrupt(format!("checkpoint truncated while reading {what}"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<TinyDenoiser> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt("bad checkpoint magic".into()));
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let n_layers = cur.u32("layer count")? as usize;
    if n_layers == 0 || n_layers > 64 {
        return Err(Error::Corrupt(format!("implausible layer count {n_layers}")));
    }
    let dims = (0..=n_layers)
        .map(|_| cur.u32("layer widths").map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let total_steps = cur.u32("step count")? as usize;
    let n_params: usize = dims.windows(2).map(|d| d[0] * d[1] + d[1]).sum();
    let expected_len = cur.pos + 8 * (total_steps + n_params) + DIGEST_LEN;
    if bytes.len() != expected_len {
        return Err(Error::Corrupt(format!(
            "checkpoint is {} bytes, header implies {expected_len}",
            bytes.len()
        )));
    }
    let body_end = bytes.len() - DIGEST_LEN;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return Err(Error::Corrupt("checkpoint checksum mismatch".into()));
    }
    let mut read_f64s = |n: usize| -> Result<Vec<f64>> {
        Ok(cur
            .take(8 * n, "parameters")?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let alpha_bars = read_f64s(total_steps)?;
    let mut layers = Vec::with_capacity(n_layers);
    for d in dims.windows(2) {
        let w = Array2::from_shape_vec((d[0], d[1]), read_f64s(d[0] * d[1])?)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        let b = Array1::from(read_f64s(d[1])?);
        layers.push(Layer { w, b });
    }
    let params = MlpParams { layers };
    if !params.is_finite() {
        return Err(Error::Corrupt("checkpoint contains non-finite parameters".into()));
    }
    TinyDenoiser::from_alpha_bars(params, alpha_bars)
}

pub fn save_checkpoint(model: &TinyDenoiser, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<TinyDenoiser> {
    read_checkpoint(&fs::read(path)?)
}
