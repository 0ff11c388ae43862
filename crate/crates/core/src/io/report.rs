//! Run reports written next to predictions.

use serde::{Deserialize, Serialize};

use super::sequence::SequenceMeta;
use crate::error::Result;
use crate::metrics::SequenceMetrics;
use crate::propagation::TrackerConfig;
use crate::refiner::{RefinerKind, SelectionMode};

/// Where the per-frame masks came from before refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorInfo {
    Vmos { weights: String },
    Oracle { erosion: usize, miss_prob: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Annotation,
    Vmos,
    Refined,
}

impl Source {
    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Annotation => "annotation",
            Source::Vmos => "vmos",
            Source::Refined => "refined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub frame: usize,
    pub object: u32,
    pub source: Source,
    /// IoU between the proposal and the refined mask, when a refiner ran.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryLog {
    /// Long-term writes over the run.
    pub stores: usize,
    pub evictions: usize,
    /// Long-term frame indices held after the last frame.
    pub long_term: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub version: String,
    pub sequence: SequenceMeta,
    pub config: TrackerConfig,
    pub predictor: PredictorInfo,
    pub refiner: Option<RefinerKind>,
    pub selection: Option<SelectionMode>,
    /// True whenever ground truth past frame 0 fed the predictions.
    pub gt_used_for_prediction: bool,
    pub memory: MemoryLog,
    pub decisions: Vec<DecisionRecord>,
    pub metrics: Option<SequenceMetrics>,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The report with timing zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        Self {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }

    /// `frame,object,score,chosen_source` rows. Scores need metrics.
    pub fn plot_csv(&self) -> Result<String> {
        let metrics = self.metrics.as_ref().ok_or(crate::Error::Empty(
            "report has no metrics; run track on a sequence with full ground truth",
        ))?;
        let mut out = String::from("frame,object,score,chosen_source\n");
        for d in &self.decisions {
            let score = metrics
                .per_object
                .get(d.object as usize - 1)
                .and_then(|m| m.scores.get(d.frame))
                .ok_or_else(|| crate::Error::Shape(format!("no score for frame {} object {}", d.frame, d.object)))?;
            out.push_str(&format!("{},{},{},{}\n", d.frame, d.object, score, d.source.as_str()));
        }
        Ok(out)
    }
}
