//! Binary PGM (`P5`) with maxval 255.

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub fn encode(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Reads the next header token, skipping whitespace and `#` comments.
fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(Error::parse("pgm header", "truncated")),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse("pgm header", format!("bad {what} {:?}", String::from_utf8_lossy(tok))))
}

pub fn decode(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    if token(bytes, &mut pos)? != b"P5" {
        return Err(Error::parse("pgm header", "expected P5 magic"));
    }
    let width = number(bytes, &mut pos, "width")?;
    let height = number(bytes, &mut pos, "height")?;
    let maxval = number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::parse("pgm header", format!("maxval {maxval}, only 255 is supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::parse("pgm header", "missing raster separator"));
    }
    pos += 1;
    let raster = &bytes[pos..];
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse("pgm header", "dimensions overflow"))?;
    if raster.len() != n {
        return Err(Error::parse(
            "pgm raster",
            format!("{} bytes for {width}x{height}", raster.len()),
        ));
    }
    GrayImage::new(width, height, raster.to_vec())
}
