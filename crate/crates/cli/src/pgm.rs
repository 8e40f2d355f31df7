//! Binary portable graymap (P5) output for frame strips.

use std::io::Write;
use std::path::Path;

use actscale_core::toyworld::{Frame, FRAME_SIZE};

/// Nearest-neighbour upscaling applied to every frame.
pub const SCALE: usize = 4;

/// Grid of frames: one strip per row, frames left to right. Short rows are
/// padded with black.
pub fn encode_grid(rows: &[Vec<&Frame>]) -> Vec<u8> {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let cell = FRAME_SIZE * SCALE;
    let (width, height) = (cols * cell, rows.len() * cell);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    let header = out.len();
    out.resize(header + width * height, 0);
    for (r, strip) in rows.iter().enumerate() {
        for (c, frame) in strip.iter().enumerate() {
            for y in 0..cell {
                for x in 0..cell {
                    let v = frame.get(y / SCALE, x / SCALE).clamp(0.0, 1.0);
                    out[header + (r * cell + y) * width + c * cell + x] = (v * 255.0).round() as u8;
                }
            }
        }
    }
    out
}

pub fn write_grid(path: &Path, rows: &[Vec<&Frame>]) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode_grid(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_header() {
        let white = Frame::constant(1.0).unwrap();
        let black = Frame::constant(0.0).unwrap();
        let bytes = encode_grid(&[vec![&white, &black], vec![&black]]);
        let header = b"P5\n128 128\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let px = &bytes[header.len()..];
        assert_eq!(px.len(), 128 * 128);
        assert_eq!(px[0], 255);
        assert_eq!(px[63], 255);
        assert_eq!(px[64], 0);
        assert_eq!(px[64 * 128 + 70], 0);
    }
}
