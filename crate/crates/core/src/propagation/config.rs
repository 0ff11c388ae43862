use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feature scales of the pyramid, coarse to fine.
pub const SCALES: [usize; 3] = [16, 8, 4];

/// Scales that carry gated propagation layers and therefore need memory.
pub const GPM_SCALES: [usize; 2] = [16, 8];

/// Every tracker hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    /// Long-term memory gap `G` in frames.
    pub memory_gap: usize,
    /// Long-term memory capacity `L`, not counting the pinned first frame.
    pub long_term_capacity: usize,
    /// IoU threshold of the mask selector.
    pub tau: f64,
    pub gpm_layers_16: usize,
    pub gpm_layers_8: usize,
    pub vis_channels: usize,
    pub id_channels: usize,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            memory_gap: 50,
            long_term_capacity: 8,
            tau: 0.1,
            gpm_layers_16: 3,
            gpm_layers_8: 1,
            vis_channels: 16,
            id_channels: 16,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory_gap < 1 {
            return Err(Error::Config("memory_gap must be >= 1".into()));
        }
        if self.long_term_capacity < 1 {
            return Err(Error::Config("long_term_capacity must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.vis_channels == 0 || self.id_channels == 0 {
            return Err(Error::Config("channel widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn gpm_layers(&self, scale: usize) -> usize {
        match scale {
            16 => self.gpm_layers_16,
            8 => self.gpm_layers_8,
            _ => 0,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrackerConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Spatial dims `(h, w)` of a feature map at `scale` for a `height x width` frame.
pub fn scale_dims(height: usize, width: usize, scale: usize) -> (usize, usize) {
    (height.div_ceil(scale), width.div_ceil(scale))
}
