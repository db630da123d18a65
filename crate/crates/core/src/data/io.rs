//! Binary PPM (P6, 8-bit RGB) and 16-bit PGM (P5) used for transmittance maps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{to_u8, RgbImage};

fn parse_err(path: &Path, offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        reason: format!("byte {offset}: {}", reason.into()),
    }
}

/// Reads the whitespace-separated header tokens, skipping `#` comments. Returns the tokens
/// and the offset of the first payload byte.
fn header(bytes: &[u8], path: &Path, count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::new();
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(parse_err(path, i, "truncated header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    // Exactly one whitespace byte separates the header from the raster.
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(parse_err(path, i, "missing separator after header"));
    }
    Ok((tokens, i + 1))
}

fn dims(tokens: &[String], path: &Path, magic: &str, maxval: u32) -> Result<(u32, u32)> {
    if tokens[0] != magic {
        return Err(parse_err(path, 0, format!("expected magic {magic}, found {:?}", tokens[0])));
    }
    let num = |s: &str| s.parse::<u32>().map_err(|e| parse_err(path, 0, format!("bad header number {s:?}: {e}")));
    let (w, h, m) = (num(&tokens[1])?, num(&tokens[2])?, num(&tokens[3])?);
    if m != maxval {
        return Err(parse_err(path, 0, format!("unsupported maxval {m}")));
    }
    Ok((w, h))
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| to_u8(v)));
    out
}

pub fn decode_ppm(bytes: &[u8], path: &Path) -> Result<RgbImage> {
    let (tokens, start) = header(bytes, path, 4)?;
    let (w, h) = dims(&tokens, path, "P6", 255)?;
    let need = w as usize * h as usize * 3;
    if bytes.len() - start < need {
        return Err(parse_err(path, bytes.len(), format!("raster truncated: {} of {need} bytes", bytes.len() - start)));
    }
    Ok(RgbImage {
        width: w,
        height: h,
        data: bytes[start..start + need].iter().map(|&b| b as f64 / 255.0).collect(),
    })
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    std::fs::write(path, encode_ppm(img))?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&std::fs::read(path)?, path)
}

/// Values in `[0,1]` stored as big-endian 16-bit samples.
pub fn write_pgm16(path: &Path, width: u32, height: u32, values: &[f64]) -> Result<()> {
    if values.len() != width as usize * height as usize {
        return Err(Error::Shape("pgm values do not match dimensions".into()));
    }
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for &v in values {
        out.extend(((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm16(path: &Path) -> Result<(u32, u32, Vec<f64>)> {
    let bytes = std::fs::read(path)?;
    let (tokens, start) = header(&bytes, path, 4)?;
    let (w, h) = dims(&tokens, path, "P5", 65535)?;
    let need = w as usize * h as usize * 2;
    if bytes.len() - start < need {
        return Err(parse_err(path, bytes.len(), "raster truncated"));
    }
    let vals = bytes[start..start + need]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 65535.0)
        .collect();
    Ok((w, h, vals))
}
