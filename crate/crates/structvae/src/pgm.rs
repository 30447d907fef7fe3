//! Binary greyscale PGM (P5, maxval 255).

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use structvae_core::eval::ImageGrid;

/// Intensity in `[0, 1]` to a byte, rounding half up.
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[f64]) -> Vec<u8> {
    assert_eq!(pixels.len(), width * height);
    let header = format!("P5 {width} {height} 255\n");
    let mut out = Vec::with_capacity(header.len() + pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend(pixels.iter().map(|&v| to_byte(v)));
    out
}

pub fn write_pgm(grid: &ImageGrid, path: &Path) -> Result<()> {
    let bytes = encode_pgm(grid.width(), grid.height(), &grid.pixels);
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Reads a P5 image with maxval 255 into `(width, height, intensities)`.
pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decode_pgm(&bytes).with_context(|| format!("decoding {}", path.display()))
}

pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    // four whitespace-separated header tokens, then exactly one whitespace byte
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            bail!("truncated header");
        }
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        bail!("not a binary PGM (magic {})", fields[0]);
    }
    let width: usize = fields[1].parse()?;
    let height: usize = fields[2].parse()?;
    if fields[3] != "255" {
        bail!("unsupported maxval {}", fields[3]);
    }
    let raster = bytes.get(pos..pos + width * height).context("truncated raster")?;
    Ok((width, height, raster.iter().map(|&b| f64::from(b) / 255.0).collect()))
}
