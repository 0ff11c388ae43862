//! Seeded strided patch encoder standing in for a pretrained backbone.

use super::config::{scale_dims, SCALES};
use super::params::{ModelParams, PATCH_GRID};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::tensor::Tensor;

pub const MIN_FRAME_SIDE: usize = 16;

/// Per-scale feature maps, ordered like [`SCALES`]. Each level is `[h, w, c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<Tensor>) -> Result<Self> {
        if levels.len() != SCALES.len() {
            return Err(Error::Shape(format!(
                "pyramid needs {} levels, got {}",
                SCALES.len(),
                levels.len()
            )));
        }
        for l in &levels {
            l.hwc()?;
        }
        Ok(Self { levels })
    }

    pub fn level(&self, scale: usize) -> &Tensor {
        let i = SCALES
            .iter()
            .position(|&s| s == scale)
            .unwrap_or_else(|| panic!("no pyramid level for scale {scale}"));
        &self.levels[i]
    }

    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }
}

/// Average-pools each `scale x scale` patch onto a 4x4 grid (zero padding past
/// the frame edge), projects it and applies `tanh`.
pub fn encode_frame(frame: &GrayImage, params: &ModelParams) -> Result<FeaturePyramid> {
    let (w, h) = (frame.width(), frame.height());
    if w < MIN_FRAME_SIDE || h < MIN_FRAME_SIDE {
        return Err(Error::InvalidDimensions {
            width: w,
            height: h,
            reason: "frames must be at least 16x16",
        });
    }
    let mut levels = Vec::with_capacity(SCALES.len());
    for (&scale, enc) in SCALES.iter().zip(&params.encoder) {
        let (hs, ws) = scale_dims(h, w, scale);
        let cell = scale / PATCH_GRID;
        let norm = 1.0 / (cell * cell) as f64;
        let mut pooled = Vec::with_capacity(hs * ws * PATCH_GRID * PATCH_GRID);
        for py in 0..hs {
            for px in 0..ws {
                for gy in 0..PATCH_GRID {
                    for gx in 0..PATCH_GRID {
                        let (x0, y0) = (px * scale + gx * cell, py * scale + gy * cell);
                        let mut sum = 0.0;
                        for y in y0..(y0 + cell).min(h) {
                            for x in x0..(x0 + cell).min(w) {
                                sum += frame.value(x, y);
                            }
                        }
                        pooled.push(sum * norm);
                    }
                }
            }
        }
        let patches = Tensor::new(vec![hs, ws, PATCH_GRID * PATCH_GRID], pooled)?;
        let mut feats = patches.matmul(&enc.weight)?;
        feats.add_bias(&enc.bias)?;
        levels.push(feats.map(f64::tanh));
    }
    FeaturePyramid::new(levels)
}
