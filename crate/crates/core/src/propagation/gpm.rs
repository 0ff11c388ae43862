//! Dual-branch gated propagation and the multi-scale cascade.

use super::attention::{attend, attention_weights};
use super::config::{scale_dims, GPM_SCALES, SCALES};
use super::encoder::FeaturePyramid;
use super::params::{CrossScale, GpmLayerParams, GpmParams};
use crate::error::{Error, Result};
use crate::membank::MemoryView;
use crate::tensor::{sigmoid, Tensor};

/// One GPM layer.
///
/// Both branches share the attention weights computed from layer-normalised
/// visual queries and memory keys. Each branch output is gated by `sigmoid(vis · W_g + b_g)` and
/// added back onto its input.
pub fn gpm_layer(
    vis: &Tensor,
    id: &Tensor,
    mem_keys: &Tensor,
    mem_vis_values: &Tensor,
    mem_id_values: &Tensor,
    layer: &GpmLayerParams,
) -> Result<(Tensor, Tensor)> {
    if vis.rows() != id.rows() {
        return Err(Error::Shape(format!(
            "visual {:?} vs identity {:?}",
            vis.shape(),
            id.shape()
        )));
    }
    if mem_keys.rows() != mem_vis_values.rows() || mem_keys.rows() != mem_id_values.rows() {
        return Err(Error::Shape("memory keys and values disagree in length".into()));
    }
    let q = vis.layer_norm().matmul(&layer.wq)?;
    let k = mem_keys.layer_norm().matmul(&layer.wk)?;
    let weights = attention_weights(&q, &k)?;

    let vis_branch = attend(&weights, &mem_vis_values.matmul(&layer.wv)?)?;
    let id_branch = attend(&weights, &mem_id_values.matmul(&layer.wv_id)?)?;

    let mut gate = vis.matmul(&layer.wg)?;
    gate.add_bias(&layer.bg)?;
    let gate = gate.map(sigmoid);
    let mut gate_id = vis.matmul(&layer.wg_id)?;
    gate_id.add_bias(&layer.bg_id)?;
    let gate_id = gate_id.map(sigmoid);

    let vis_out = vis.add(&gate.mul(&vis_branch.reshape(vis.shape().to_vec())?)?)?;
    let id_out = id.add(&gate_id.mul(&id_branch.reshape(id.shape().to_vec())?)?)?;
    Ok((vis_out, id_out))
}

/// Propagated visual and identity maps at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatedLevel {
    pub scale: usize,
    pub vis: Tensor,
    pub id: Tensor,
}

/// Output of the cascade, ordered like [`SCALES`].
#[derive(Debug, Clone, PartialEq)]
pub struct Propagated {
    pub levels: Vec<PropagatedLevel>,
}

impl Propagated {
    pub fn level(&self, scale: usize) -> &PropagatedLevel {
        self.levels
            .iter()
            .find(|l| l.scale == scale)
            .unwrap_or_else(|| panic!("no propagated level for scale {scale}"))
    }
}

/// GPM applications per scale during one forward pass, ordered like [`SCALES`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CascadeTrace {
    pub gpm_calls: [usize; 3],
}

impl CascadeTrace {
    pub fn calls_at(&self, scale: usize) -> usize {
        SCALES
            .iter()
            .position(|&s| s == scale)
            .map_or(0, |i| self.gpm_calls[i])
    }

    pub fn total(&self) -> usize {
        self.gpm_calls.iter().sum()
    }
}

fn carry(level: &PropagatedLevel, cross: &CrossScale, h: usize, w: usize) -> Result<(Tensor, Tensor)> {
    let vis = level.vis.matmul(&cross.vis)?.resize_bilinear(h, w)?;
    let id = level.id.matmul(&cross.id)?.resize_bilinear(h, w)?;
    Ok((vis, id))
}

/// Runs the cascade: GPM layers at 1/16, project and upsample to 1/8, GPM
/// layers at 1/8, then project and upsample to 1/4 without propagation.
pub fn propagate(
    pyramid: &FeaturePyramid,
    memory: &MemoryView,
    params: &GpmParams,
) -> Result<(Propagated, CascadeTrace)> {
    if memory.is_empty() {
        return Err(Error::Empty("propagation memory"));
    }
    let mut trace = CascadeTrace::default();
    let mut levels: Vec<PropagatedLevel> = Vec::with_capacity(SCALES.len());
    for (si, &scale) in SCALES.iter().enumerate() {
        let enc = pyramid.level(scale);
        let (h, w, _) = enc.hwc()?;
        let id_channels = memory.level(GPM_SCALES[0]).id_values.channels();
        let (mut vis, mut id) = match levels.last() {
            None => (enc.clone(), Tensor::zeros(vec![h, w, id_channels])),
            Some(prev) => {
                let cross = if prev.scale == 16 {
                    &params.cross_16_8
                } else {
                    &params.cross_8_4
                };
                let (v, i) = carry(prev, cross, h, w)?;
                (enc.add(&v)?, i)
            }
        };
        let layers = params.layers(scale);
        if !layers.is_empty() {
            let mem = memory.level(scale);
            for layer in layers {
                (vis, id) = gpm_layer(&vis, &id, &mem.keys, &mem.vis_values, &mem.id_values, layer)?;
                trace.gpm_calls[si] += 1;
            }
        }
        levels.push(PropagatedLevel { scale, vis, id });
    }
    Ok((Propagated { levels }, trace))
}

/// Checks that every level of `pyramid` matches the scale arithmetic for a `height x width` frame.
pub fn check_pyramid_dims(pyramid: &FeaturePyramid, height: usize, width: usize) -> Result<()> {
    for &scale in &SCALES {
        let (h, w, _) = pyramid.level(scale).hwc()?;
        if (h, w) != scale_dims(height, width, scale) {
            return Err(Error::Shape(format!(
                "scale {scale} level is {h}x{w} for a {height}x{width} frame"
            )));
        }
    }
    Ok(())
}
