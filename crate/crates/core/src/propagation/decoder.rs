//! Top-down FPN decoder and per-pixel object assignment.

use super::config::SCALES;
use super::encoder::FeaturePyramid;
use super::gpm::Propagated;
use super::identity::IdentityBank;
use super::params::DecoderParams;
use crate::error::{Error, Result};
use crate::mask::LabelMap;
use crate::tensor::Tensor;

/// Fuses propagated and encoder features coarse-to-fine and scores every pixel
/// against every identity vector.
///
/// Returns logits as `[height, width, M + 1]` (channel 0 is background). The
/// final projection is tied to the (unit-normalised) identity bank, so
/// relabelling objects together with the bank relabels the output channels.
pub fn decode(
    propagated: &Propagated,
    encoder: &FeaturePyramid,
    bank: &IdentityBank,
    params: &DecoderParams,
    height: usize,
    width: usize,
) -> Result<Tensor> {
    let mut fused: Option<Tensor> = None;
    for (i, &scale) in SCALES.iter().enumerate() {
        let prop = propagated.level(scale);
        let enc = encoder.level(scale);
        let (h, w, _) = enc.hwc()?;
        let mut lateral = Tensor::concat_channels(&[&prop.vis, &prop.id, enc])?.matmul(&params.lateral[i])?;
        lateral.add_bias(&params.lateral_bias[i])?;
        fused = Some(match fused {
            None => lateral,
            Some(coarse) => lateral.add(&coarse.resize_bilinear(h, w)?)?,
        });
    }
    let fused = fused.ok_or(Error::Empty("decoder levels"))?;
    let finest = propagated.level(SCALES[SCALES.len() - 1]);
    let id_full = finest.id.resize_bilinear(height, width)?;
    let embedding = fused
        .resize_bilinear(height, width)?
        .map(f64::tanh)
        .matmul(&params.readout)?
        .add(&id_full)?;
    let c = bank.channels();
    if embedding.channels() != c {
        return Err(Error::Shape(format!(
            "embedding has {} channels, identity bank {c}",
            embedding.channels()
        )));
    }
    let classes = bank.num_objects() as usize + 1;
    let directions: Vec<Vec<f64>> = (0..classes as u32)
        .map(|k| {
            let v = bank.vector(k);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut logits = Vec::with_capacity(height * width * classes);
    for r in 0..embedding.rows() {
        let e = embedding.row(r);
        for d in &directions {
            logits.push(e.iter().zip(d).map(|(a, b)| a * b).sum());
        }
    }
    Tensor::new(vec![height, width, classes], logits)
}

/// Per-pixel argmax over `[h, w, M + 1]` logits; ties go to the higher channel.
pub fn argmax_labels(logits: &Tensor) -> Result<LabelMap> {
    let (h, w, classes) = logits.hwc()?;
    if classes == 0 {
        return Err(Error::Empty("logit channels"));
    }
    let labels = (0..h * w)
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate().skip(1) {
                if v >= row[best] {
                    best = k;
                }
            }
            best as u32
        })
        .collect();
    LabelMap::from_labels(w, h, classes as u32 - 1, labels)
}

/// Mean margin of each object's logit over the runner-up, across the pixels it wins.
/// Empty objects score 0.
pub fn confidences(logits: &Tensor, labels: &LabelMap) -> Vec<f64> {
    let m = labels.num_objects() as usize;
    let mut sums = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (r, &l) in labels.labels().iter().enumerate() {
        if l == 0 {
            continue;
        }
        let row = logits.row(r);
        let own = row[l as usize];
        let other = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != l as usize)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        sums[l as usize - 1] += own - other;
        counts[l as usize - 1] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect()
}
