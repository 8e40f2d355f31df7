//! Binary dataset format. All integers and floats are little-endian.
//!
//! ```text
//! header (36 bytes)
//!   0   [u8; 4]  magic "ASTW"
//!   4   u32      format version (1)
//!   8   u32      number of episodes E
//!   12  u32      frames per episode N
//!   16  u32      frame height H (16)
//!   20  u32      frame width W (16)
//!   24  u32      action dimension D (2)
//!   28  u64      generation seed
//! E episode records, each
//!   u64          episode id
//!   f32 × 2N     positions, (x, y) per frame
//!   f32 × D(N−1) actions, step-major
//!   f32 × N·H·W  frames, frame-major then row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Episode, Frame, ACTION_DIM, FRAME_PIXELS, FRAME_SIZE};
use crate::error::{Error, Result};
use crate::guidance::ActionVector;

pub const DATASET_MAGIC: [u8; 4] = *b"ASTW";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub n_episodes: u32,
    pub frames_per_episode: u32,
    pub height: u32,
    pub width: u32,
    pub action_dim: u32,
    pub seed: u64,
}

pub fn write_dataset<W: Write>(mut w: W, episodes: &[Episode]) -> Result<()> {
    let first = episodes
        .first()
        .ok_or_else(|| Error::InvalidInput("refusing to write an empty dataset".into()))?;
    let n = first.len();
    if episodes.iter().any(|e| e.len() != n || e.actions.len() + 1 != n) {
        return Err(Error::InvalidInput("episodes must share one length".into()));
    }
    w.write_all(&DATASET_MAGIC)?;
    for v in [
        DATASET_VERSION,
        episodes.len() as u32,
        n as u32,
        FRAME_SIZE as u32,
        FRAME_SIZE as u32,
        ACTION_DIM as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&first.seed.to_le_bytes())?;
    let put = |w: &mut W, v: f64| w.write_all(&(v as f32).to_le_bytes());
    for ep in episodes {
        w.write_all(&ep.id.to_le_bytes())?;
        for p in &ep.positions {
            put(&mut w, p[0])?;
            put(&mut w, p[1])?;
        }
        for a in &ep.actions {
            for &v in a.values() {
                put(&mut w, v)?;
            }
        }
        for f in &ep.frames {
            for &v in f.pixels() {
                put(&mut w, v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Corrupt(format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, n: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<(DatasetHeader, Vec<Episode>)> {
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::Corrupt(format!("bad dataset magic {magic:?}")));
    }
    let version = read_u32(&mut r, "version")?;
    if version != DATASET_VERSION {
        return Err(Error::Version { found: version, expected: DATASET_VERSION });
    }
    let header = DatasetHeader {
        version,
        n_episodes: read_u32(&mut r, "episode count")?,
        frames_per_episode: read_u32(&mut r, "frame count")?,
        height: read_u32(&mut r, "height")?,
        width: read_u32(&mut r, "width")?,
        action_dim: read_u32(&mut r, "action dim")?,
        seed: read_u64(&mut r, "seed")?,
    };
    if header.height as usize != FRAME_SIZE
        || header.width as usize != FRAME_SIZE
        || header.action_dim as usize != ACTION_DIM
    {
        return Err(Error::ShapeMismatch(format!(
            "dataset is {}×{} with {}-D actions, expected {FRAME_SIZE}×{FRAME_SIZE} with {ACTION_DIM}-D",
            header.height, header.width, header.action_dim
        )));
    }
    let n = header.frames_per_episode as usize;
    if n < 2 {
        return Err(Error::Corrupt(format!("episodes need >= 2 frames, header says {n}")));
    }
    let mut episodes = Vec::with_capacity(header.n_episodes as usize);
    for _ in 0..header.n_episodes {
        let id = read_u64(&mut r, "episode id")?;
        let pos = read_f32s(&mut r, 2 * n, "positions")?;
        let act = read_f32s(&mut r, ACTION_DIM * (n - 1), "actions")?;
        let pix = read_f32s(&mut r, FRAME_PIXELS * n, "frames")?;
        let positions = pos.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let actions = act
            .chunks_exact(ACTION_DIM)
            .map(ActionVector::try_from)
            .collect::<Result<_>>()
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        let frames = pix
            .chunks_exact(FRAME_PIXELS)
            .map(|c| Frame::new(c.to_vec()))
            .collect::<Result<_>>()
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        episodes.push(Episode { id, seed: header.seed, positions, actions, frames });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Corrupt("trailing bytes after last episode".into()));
    }
    Ok((header, episodes))
}

pub fn save_dataset(path: impl AsRef<Path>, episodes: &[Episode]) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), episodes)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    read_dataset(BufReader::new(File::open(path)?)).map(|(_, eps)| eps)
}
