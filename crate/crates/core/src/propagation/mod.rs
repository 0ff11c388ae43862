//! Toy video multi-object segmenter.
//!
//! Frames are encoded into a 1/16, 1/8, 1/4 feature pyramid. Object identities
//! from memory are carried to the current frame by gated propagation layers
//! (three at 1/16, one at 1/8 by default); the 1/4 level only receives
//! projected and upsampled features. A small FPN decoder then scores every
//! pixel against each identity vector.
//!
//! The propagation layer is a simplified stand-in for the DeAOT gated
//! propagation module: one shared single-head attention, sigmoid gates and
//! residual adds, without the self-attention and normalisation sublayers.

pub mod attention;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod gpm;
pub mod identity;
pub mod params;

use std::sync::Arc;

pub use attention::{attend, attention, attention_weights};
pub use config::{scale_dims, TrackerConfig, GPM_SCALES, SCALES};
pub use decoder::{argmax_labels, confidences, decode};
pub use encoder::{encode_frame, FeaturePyramid};
pub use gpm::{gpm_layer, propagate, CascadeTrace, Propagated, PropagatedLevel};
pub use identity::{embed_identities, IdentityBank};
pub use params::{GpmLayerParams, GpmParams, ModelParams};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::mask::{Bitmask, LabelMap};
use crate::membank::{should_store, MemoryBank, MemoryEntry, MemoryLevel};

/// Per-frame segmentation output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResult {
    pub frame_index: usize,
    pub labelmap: LabelMap,
    /// One mask per object, id order.
    pub masks: Vec<Bitmask>,
    /// Mean logit margin per object; 0 for empty masks.
    pub confidences: Vec<f64>,
}

impl FrameResult {
    pub fn from_labelmap(frame_index: usize, labelmap: LabelMap, confidences: Vec<f64>) -> Self {
        let masks = labelmap.split();
        Self {
            frame_index,
            labelmap,
            masks,
            confidences,
        }
    }

    /// Merges possibly overlapping masks (highest id wins) and re-splits them.
    pub fn from_masks(frame_index: usize, masks: &[Bitmask], confidences: Vec<f64>) -> Result<Self> {
        let labelmap = LabelMap::merge(masks)?;
        Ok(Self::from_labelmap(frame_index, labelmap, confidences))
    }

    pub fn num_objects(&self) -> usize {
        self.masks.len()
    }
}

fn build_entry(
    frame_index: usize,
    encoded: &FeaturePyramid,
    propagated: Option<&Propagated>,
    labels: &LabelMap,
    bank: &IdentityBank,
) -> Result<MemoryEntry> {
    let mut levels = Vec::with_capacity(GPM_SCALES.len());
    for &scale in &GPM_SCALES {
        let enc = encoded.level(scale);
        let (h, w, c) = enc.hwc()?;
        let keys = enc.clone().reshape(vec![h * w, c])?;
        let vis_values = match propagated {
            Some(p) => p.level(scale).vis.clone().reshape(vec![h * w, c])?,
            None => keys.clone(),
        };
        let ids = embed_identities(&labels.resample(w, h)?, bank)?;
        let id_values = ids.reshape(vec![h * w, bank.channels()])?;
        levels.push(MemoryLevel {
            scale,
            keys,
            vis_values,
            id_values,
        });
    }
    Ok(MemoryEntry {
        frame_index,
        levels,
    })
}

/// Single-sequence tracking state. Frames must be fed in order.
#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    params: Arc<ModelParams>,
    bank: IdentityBank,
    memory: MemoryBank<MemoryEntry>,
    frame_index: usize,
    width: usize,
    height: usize,
    last_trace: CascadeTrace,
}

impl Tracker {
    /// Initialises from the annotated first frame with a seeded identity bank.
    /// The returned result is the annotation itself.
    pub fn new(
        config: TrackerConfig,
        params: Arc<ModelParams>,
        first_frame: &GrayImage,
        annotation: &LabelMap,
    ) -> Result<(Self, FrameResult)> {
        let bank = IdentityBank::seeded(annotation.num_objects(), config.id_channels, config.seed);
        Self::with_bank(config, params, bank, first_frame, annotation)
    }

    pub fn with_bank(
        config: TrackerConfig,
        params: Arc<ModelParams>,
        bank: IdentityBank,
        first_frame: &GrayImage,
        annotation: &LabelMap,
    ) -> Result<(Self, FrameResult)> {
        config.validate()?;
        check_params(&config, &params)?;
        if bank.num_objects() != annotation.num_objects() || bank.channels() != config.id_channels {
            return Err(Error::Config(format!(
                "identity bank {}x{} does not fit {} objects with {} id channels",
                bank.num_objects() + 1,
                bank.channels(),
                annotation.num_objects(),
                config.id_channels
            )));
        }
        if (first_frame.width(), first_frame.height()) != (annotation.width(), annotation.height()) {
            return Err(Error::DimensionMismatch {
                left_w: first_frame.width(),
                left_h: first_frame.height(),
                right_w: annotation.width(),
                right_h: annotation.height(),
            });
        }
        let encoded = encode_frame(first_frame, &params)?;
        let entry = build_entry(0, &encoded, None, annotation, &bank)?;
        let mut memory = MemoryBank::new(config.long_term_capacity);
        memory.initialize(entry);
        let tracker = Self {
            width: first_frame.width(),
            height: first_frame.height(),
            config,
            params,
            bank,
            memory,
            frame_index: 0,
            last_trace: CascadeTrace::default(),
        };
        let m = annotation.num_objects() as usize;
        Ok((tracker, FrameResult::from_labelmap(0, annotation.clone(), vec![0.0; m])))
    }

    /// Segments the next frame and updates memory with the (unrefined) prediction.
    pub fn predict(&mut self, frame: &GrayImage) -> Result<FrameResult> {
        if (frame.width(), frame.height()) != (self.width, self.height) {
            return Err(Error::DimensionMismatch {
                left_w: frame.width(),
                left_h: frame.height(),
                right_w: self.width,
                right_h: self.height,
            });
        }
        let index = self.frame_index + 1;
        let encoded = encode_frame(frame, &self.params)?;
        let view = self.memory.gather()?;
        let (propagated, trace) = propagate(&encoded, &view, &self.params.gpm)?;
        let logits = decode(
            &propagated,
            &encoded,
            &self.bank,
            &self.params.decoder,
            self.height,
            self.width,
        )?;
        let labels = argmax_labels(&logits)?;
        let conf = confidences(&logits, &labels);

        let entry = build_entry(index, &encoded, Some(&propagated), &labels, &self.bank)?;
        if should_store(index, self.config.memory_gap) {
            self.memory.store(entry.clone())?;
        }
        self.memory.update_short_term(entry);
        self.frame_index = index;
        self.last_trace = trace;
        Ok(FrameResult::from_labelmap(index, labels, conf))
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn memory(&self) -> &MemoryBank<MemoryEntry> {
        &self.memory
    }

    pub fn identity_bank(&self) -> &IdentityBank {
        &self.bank
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    /// GPM calls made while predicting the most recent frame.
    pub fn last_trace(&self) -> CascadeTrace {
        self.last_trace
    }
}

fn check_params(config: &TrackerConfig, params: &ModelParams) -> Result<()> {
    if params.vis_channels != config.vis_channels
        || params.id_channels != config.id_channels
        || params.gpm.layers_16.len() != config.gpm_layers_16
        || params.gpm.layers_8.len() != config.gpm_layers_8
    {
        return Err(Error::Config(format!(
            "parameters ({} vis, {} id, {}+{} layers) do not match config ({} vis, {} id, {}+{} layers)",
            params.vis_channels,
            params.id_channels,
            params.gpm.layers_16.len(),
            params.gpm.layers_8.len(),
            config.vis_channels,
            config.id_channels,
            config.gpm_layers_16,
            config.gpm_layers_8
        )));
    }
    Ok(())
}
