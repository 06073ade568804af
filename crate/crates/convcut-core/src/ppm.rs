//! Binary PPM (P6) and PGM (P5) reading/writing — the only image formats the
//! tool touches. Headers are ASCII: magic, whitespace-separated width/height
//! (and maxval 255), `#` comments allowed, then raw bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples, height*width*3 bytes.
    pub pixels: Vec<u8>,
}

fn data_err(path: &Path, msg: &str) -> Error {
    Error::Data(format!("{}: {msg}", path.display()))
}

/// Pull the next whitespace-delimited ASCII token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    while *pos < bytes.len() {
        let b = bytes[*pos];
        if b == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (*pos > start).then(|| bytes[start..*pos].to_vec())
}

fn parse_dim(path: &Path, token: Option<Vec<u8>>, what: &str) -> Result<usize> {
    let token = token.ok_or_else(|| data_err(path, &format!("missing {what}")))?;
    std::str::from_utf8(&token)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| data_err(path, &format!("bad {what}")))
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pos = 0usize;
    match next_token(&bytes, &mut pos) {
        Some(m) if m == b"P6" => {}
        _ => return Err(data_err(path, "not a P6 PPM (bad magic)")),
    }
    let width = parse_dim(path, next_token(&bytes, &mut pos), "width")?;
    let height = parse_dim(path, next_token(&bytes, &mut pos), "height")?;
    let maxval = parse_dim(path, next_token(&bytes, &mut pos), "maxval")?;
    if maxval != 255 {
        return Err(data_err(path, &format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(data_err(path, "missing raster separator"));
    }
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(data_err(path, "truncated pixel data"));
    }
    Ok(RgbImage {
        width,
        height,
        pixels: bytes[pos..pos + need].to_vec(),
    })
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    debug_assert_eq!(img.pixels.len(), img.width * img.height * 3);
    let mut out = Vec::with_capacity(img.pixels.len() + 32);
    write!(out, "P6\n{} {}\n255\n", img.width, img.height).expect("vec write");
    out.extend_from_slice(&img.pixels);
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// 8-bit grayscale P5.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    debug_assert_eq!(pixels.len(), width * height);
    let mut out = Vec::with_capacity(pixels.len() + 32);
    write!(out, "P5\n{width} {height}\n255\n").expect("vec write");
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
