//! Parameter sets of the toy segmenter and their seeded initialisation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{TrackerConfig, SCALES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Each encoder patch is average-pooled onto a fixed 4x4 grid before projection.
pub const PATCH_GRID: usize = 4;
pub const PATCH_FEATURES: usize = PATCH_GRID * PATCH_GRID;

/// Sharpness applied to the shared query/key initialisation.
const QK_GAIN: f64 = 3.0;

/// Initial weight of 1/16 features carried into the 1/8 propagation stage.
const CROSS_16_8_GAIN: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLevel {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One dual-branch gated propagation layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GpmLayerParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wv_id: Tensor,
    pub wg: Tensor,
    pub bg: Tensor,
    pub wg_id: Tensor,
    pub bg_id: Tensor,
}

/// Linear projections carrying propagated features to the next finer scale.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossScale {
    pub vis: Tensor,
    pub id: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpmParams {
    pub layers_16: Vec<GpmLayerParams>,
    pub layers_8: Vec<GpmLayerParams>,
    pub cross_16_8: CrossScale,
    pub cross_8_4: CrossScale,
}

impl GpmParams {
    pub fn layers(&self, scale: usize) -> &[GpmLayerParams] {
        match scale {
            16 => &self.layers_16,
            8 => &self.layers_8,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    /// Per-scale lateral projection of `[propagated vis | propagated id | encoder]`.
    pub lateral: Vec<Tensor>,
    pub lateral_bias: Vec<Tensor>,
    /// Full-resolution projection into identity space; logits are dot products with the bank.
    pub readout: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vis_channels: usize,
    pub id_channels: usize,
    /// One level per entry of [`SCALES`].
    pub encoder: Vec<EncoderLevel>,
    pub gpm: GpmParams,
    pub decoder: DecoderParams,
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    fn normal(&mut self, shape: Vec<usize>, std: f64) -> Tensor {
        let rng = &mut self.rng;
        Tensor::from_fn(shape, |_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
    }
}

fn eye(n: usize) -> Tensor {
    Tensor::from_fn(vec![n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
}

impl ModelParams {
    /// Seeded initialisation. Value paths start as identity maps so the
    /// untrained model already carries identities along attention matches.
    pub fn seeded(config: &TrackerConfig) -> Self {
        let (cv, ci) = (config.vis_channels, config.id_channels);
        let mut init = Init {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        };
        let encoder = SCALES
            .iter()
            .map(|_| EncoderLevel {
                weight: init.normal(vec![PATCH_FEATURES, cv], 2.0 / (PATCH_FEATURES as f64).sqrt()),
                bias: init.normal(vec![cv], 0.1),
            })
            .collect();
        let layer = |init: &mut Init| {
            let wq = init.normal(vec![cv, cv], QK_GAIN / (cv as f64).sqrt());
            GpmLayerParams {
                wk: wq.clone(),
                wq,
                wv: eye(cv),
                wv_id: eye(ci),
                wg: init.normal(vec![cv, cv], 0.1 / (cv as f64).sqrt()),
                bg: Tensor::zeros(vec![cv]),
                wg_id: init.normal(vec![cv, ci], 0.1 / (cv as f64).sqrt()),
                bg_id: Tensor::zeros(vec![ci]),
            }
        };
        let layers_16 = (0..config.gpm_layers_16).map(|_| layer(&mut init)).collect();
        let layers_8 = (0..config.gpm_layers_8).map(|_| layer(&mut init)).collect();
        let cross = |gain: f64| CrossScale {
            vis: eye(cv).map(|v| v * gain),
            id: eye(ci).map(|v| v * gain),
        };
        let lat_in = 2 * cv + ci;
        let decoder = DecoderParams {
            lateral: SCALES
                .iter()
                .map(|_| init.normal(vec![lat_in, cv], 0.5 / (lat_in as f64).sqrt()))
                .collect(),
            lateral_bias: SCALES.iter().map(|_| Tensor::zeros(vec![cv])).collect(),
            readout: init.normal(vec![cv, ci], 0.05 / (cv as f64).sqrt()),
        };
        ModelParams {
            vis_channels: cv,
            id_channels: ci,
            encoder,
            gpm: GpmParams {
                layers_16,
                layers_8,
                cross_16_8: cross(CROSS_16_8_GAIN),
                cross_8_4: cross(1.0),
            },
            decoder,
        }
    }

    /// All-zero parameters with the shapes implied by `config`.
    pub fn zeros(config: &TrackerConfig) -> Self {
        let mut p = Self::seeded(config);
        for (_, t) in p.named_mut() {
            t.values_mut().fill(0.0);
        }
        p
    }

    /// Parameters in their canonical serialisation order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (s, lvl) in SCALES.iter().zip(&self.encoder) {
            out.push((format!("encoder.s{s}.weight"), &lvl.weight));
            out.push((format!("encoder.s{s}.bias"), &lvl.bias));
        }
        for (s, layers) in [(16, &self.gpm.layers_16), (8, &self.gpm.layers_8)] {
            for (i, l) in layers.iter().enumerate() {
                for (n, t) in [
                    ("wq", &l.wq),
                    ("wk", &l.wk),
                    ("wv", &l.wv),
                    ("wv_id", &l.wv_id),
                    ("wg", &l.wg),
                    ("bg", &l.bg),
                    ("wg_id", &l.wg_id),
                    ("bg_id", &l.bg_id),
                ] {
                    out.push((format!("gpm.s{s}.l{i}.{n}"), t));
                }
            }
        }
        for (n, c) in [("s16_s8", &self.gpm.cross_16_8), ("s8_s4", &self.gpm.cross_8_4)] {
            out.push((format!("cross.{n}.vis"), &c.vis));
            out.push((format!("cross.{n}.id"), &c.id));
        }
        for (i, s) in SCALES.iter().enumerate() {
            out.push((format!("decoder.s{s}.lateral"), &self.decoder.lateral[i]));
            out.push((format!("decoder.s{s}.lateral_bias"), &self.decoder.lateral_bias[i]));
        }
        out.push(("decoder.readout".into(), &self.decoder.readout));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (s, lvl) in SCALES.iter().zip(self.encoder.iter_mut()) {
            out.push((format!("encoder.s{s}.weight"), &mut lvl.weight));
            out.push((format!("encoder.s{s}.bias"), &mut lvl.bias));
        }
        for (s, layers) in [(16, &mut self.gpm.layers_16), (8, &mut self.gpm.layers_8)] {
            for (i, l) in layers.iter_mut().enumerate() {
                for (n, t) in [
                    ("wq", &mut l.wq),
                    ("wk", &mut l.wk),
                    ("wv", &mut l.wv),
                    ("wv_id", &mut l.wv_id),
                    ("wg", &mut l.wg),
                    ("bg", &mut l.bg),
                    ("wg_id", &mut l.wg_id),
                    ("bg_id", &mut l.bg_id),
                ] {
                    out.push((format!("gpm.s{s}.l{i}.{n}"), t));
                }
            }
        }
        for (n, c) in [
            ("s16_s8", &mut self.gpm.cross_16_8),
            ("s8_s4", &mut self.gpm.cross_8_4),
        ] {
            out.push((format!("cross.{n}.vis"), &mut c.vis));
            out.push((format!("cross.{n}.id"), &mut c.id));
        }
        let decoder = &mut self.decoder;
        for ((s, lat), bias) in SCALES
            .iter()
            .zip(decoder.lateral.iter_mut())
            .zip(decoder.lateral_bias.iter_mut())
        {
            out.push((format!("decoder.s{s}.lateral"), lat));
            out.push((format!("decoder.s{s}.lateral_bias"), bias));
        }
        out.push(("decoder.readout".into(), &mut decoder.readout));
        out
    }

    /// Assembles parameters from a name -> tensor map, rejecting unknown,
    /// missing or mis-shaped entries.
    pub fn from_named(config: &TrackerConfig, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut params = Self::zeros(config);
        for (name, slot) in params.named_mut() {
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::Weights(format!("missing parameter {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Weights(format!(
                    "{name}: dims {:?} do not match config {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t;
        }
        if let Some(name) = tensors.keys().next() {
            return Err(Error::Weights(format!("unknown parameter {name}")));
        }
        Ok(params)
    }

    /// Forces every gate pre-activation bias to `value`.
    pub fn set_gate_bias(&mut self, value: f64) {
        for l in self.gpm.layers_16.iter_mut().chain(self.gpm.layers_8.iter_mut()) {
            l.bg.values_mut().fill(value);
            l.bg_id.values_mut().fill(value);
        }
    }
}
