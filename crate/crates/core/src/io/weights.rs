//! TFW1 weight files.
//!
//! Layout, all integers big-endian: magic `TFW1`, `u32` tensor count, then per
//! tensor a `u16` name length, UTF-8 name, `u8` rank, `rank` x `u32` dims and
//! the row-major values as `f64`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::propagation::{ModelParams, TrackerConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"TFW1";

pub fn encode<'a>(tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    let mut out = MAGIC.to_vec();
    out.extend((tensors.len() as u32).to_be_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Weights(format!("name too long: {name}")))?;
        out.extend(len.to_be_bytes());
        out.extend(name.as_bytes());
        let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Weights(format!("{name}: rank too high")))?;
        out.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::Weights(format!("{name}: dim too large")))?;
            out.extend(d.to_be_bytes());
        }
        for v in t.values() {
            out.extend(v.to_be_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Weights(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
}

/// Decodes tensors in file order. Duplicate names are rejected.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Weights("bad magic, expected TFW1".into()));
    }
    let count = u32::from_be_bytes(r.array()?) as usize;
    let mut out: Vec<(String, Tensor)> = Vec::new();
    for _ in 0..count {
        let len = u16::from_be_bytes(r.array()?) as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Weights("tensor name is not UTF-8".into()))?;
        if out.iter().any(|(n, _)| *n == name) {
            return Err(Error::Weights(format!("duplicate tensor {name}")));
        }
        let rank = r.take(1)?[0] as usize;
        let shape = (0..rank)
            .map(|_| Ok(u32::from_be_bytes(r.array()?) as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| Error::Weights(format!("{name}: implausible dims {shape:?}")))?;
        let values = (0..n)
            .map(|_| Ok(f64::from_be_bytes(r.array()?)))
            .collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(shape, values).map_err(|e| Error::Weights(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Weights(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn encode_params(params: &ModelParams) -> Result<Vec<u8>> {
    let named = params.named();
    encode(named.iter().map(|(n, t)| (n.as_str(), *t)))
}

pub fn decode_params(config: &TrackerConfig, bytes: &[u8]) -> Result<ModelParams> {
    let map: BTreeMap<String, Tensor> = decode(bytes)?.into_iter().collect();
    ModelParams::from_named(config, map)
}
