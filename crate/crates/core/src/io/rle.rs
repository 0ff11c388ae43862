//! Mask files: one RLE line per object in id order. An absent object is
//! written as the all-background line `w h w*h`.

use crate::error::{Error, Result};
use crate::mask::{Bitmask, RleMask};

pub fn encode(masks: &[Bitmask]) -> String {
    let mut out = String::new();
    for m in masks {
        out.push_str(&m.to_rle().to_string());
        out.push('\n');
    }
    out
}

/// Parses a mask file. `expected` pins the object count when known.
pub fn decode(text: &str, expected: Option<usize>) -> Result<Vec<Bitmask>> {
    let masks = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.parse::<RleMask>()?.decode())
        .collect::<Result<Vec<_>>>()?;
    if let Some(m) = expected {
        if masks.len() != m {
            return Err(Error::parse("mask file", format!("{} lines, expected {m}", masks.len())));
        }
    }
    if let Some(first) = masks.first() {
        for m in &masks[1..] {
            first.same_dims(m)?;
        }
    }
    Ok(masks)
}
