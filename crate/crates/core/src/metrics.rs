//! Absence-aware tracking quality metrics.
//!
//! Every ratio is backed by integer frame counts in [`FrameCounts`], so
//! identities such as `R + NRE + DRE = 1` can be checked exactly on the counts.
//! Floating sums go through [`exact_sum`] so results do not depend on
//! summation order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Bitmask;

/// Thresholds `0.00, 0.01, ..., 1.00`.
pub const AUC_THRESHOLDS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameOutcome {
    pub gt_visible: bool,
    pub predicted: bool,
    /// IoU when both masks are non-empty, else 0.
    pub overlap: f64,
}

impl FrameOutcome {
    pub fn new(gt_visible: bool, predicted: bool, overlap: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&overlap) {
            return Err(Error::Config(format!("overlap {overlap} outside [0, 1]")));
        }
        let overlap = if gt_visible && predicted { overlap } else { 0.0 };
        Ok(Self {
            gt_visible,
            predicted,
            overlap,
        })
    }

    pub fn from_masks(gt: &Bitmask, pred: &Bitmask) -> Result<Self> {
        gt.same_dims(pred)?;
        let (v, p) = (!gt.is_empty(), !pred.is_empty());
        let overlap = if v && p { gt.iou(pred)? } else { 0.0 };
        Self::new(v, p, overlap)
    }
}

pub fn frame_score(o: &FrameOutcome) -> f64 {
    match (o.gt_visible, o.predicted) {
        (true, true) => o.overlap,
        (false, false) => 1.0,
        _ => 0.0,
    }
}

/// Correctly rounded sum of `values` (Shewchuk's partials algorithm).
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // round the partials the same way Python's math.fsum does
    let mut n = partials.len();
    if n == 0 {
        return 0.0;
    }
    n -= 1;
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        let yr = hi - x;
        lo = y - yr;
        if lo != 0.0 {
            break;
        }
    }
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

fn mean(values: impl IntoIterator<Item = f64>, n: usize) -> f64 {
    exact_sum(values) / n as f64
}

/// Frame tallies behind one object's ratios.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameCounts {
    pub frames: usize,
    pub visible: usize,
    /// Visible, predicted, overlap > 0.
    pub tracked: usize,
    /// Visible, not predicted.
    pub not_reported: usize,
    /// Visible, predicted, overlap = 0.
    pub drifted: usize,
    pub absent: usize,
    /// Absent and not predicted.
    pub absent_correct: usize,
}

impl FrameCounts {
    pub fn tally(outcomes: &[FrameOutcome]) -> Self {
        let mut c = FrameCounts {
            frames: outcomes.len(),
            ..Default::default()
        };
        for o in outcomes {
            match (o.gt_visible, o.predicted) {
                (true, true) if o.overlap > 0.0 => c.tracked += 1,
                (true, true) => c.drifted += 1,
                (true, false) => c.not_reported += 1,
                (false, false) => c.absent_correct += 1,
                (false, true) => {}
            }
            if o.gt_visible {
                c.visible += 1;
            } else {
                c.absent += 1;
            }
        }
        c
    }
}

/// Metrics of one object track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMetrics {
    pub object_id: u32,
    pub auc: f64,
    pub accuracy: f64,
    pub robustness: f64,
    pub nre: f64,
    pub dre: f64,
    pub adq: f64,
    pub quality: f64,
    pub counts: FrameCounts,
    /// Per-frame scores, frame 0 first.
    pub scores: Vec<f64>,
}

/// Area under the success curve over the 101-point threshold grid.
pub fn auc(outcomes: &[FrameOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::Empty("outcome list"));
    }
    let scores: Vec<f64> = outcomes.iter().map(frame_score).collect();
    Ok(auc_of_scores(&scores))
}

fn auc_of_scores(scores: &[f64]) -> f64 {
    let hits: usize = (0..AUC_THRESHOLDS)
        .map(|k| {
            let theta = k as f64 / 100.0;
            scores.iter().filter(|&&s| s >= theta).count()
        })
        .sum();
    hits as f64 / (AUC_THRESHOLDS * scores.len()) as f64
}

/// Metrics of one object. With no visible frames R is 1 and NRE, DRE are 0;
/// A is 1 then, and 0 when the object is visible but never predicted.
pub fn per_object_metrics(object_id: u32, outcomes: &[FrameOutcome]) -> Result<ObjectMetrics> {
    if outcomes.is_empty() {
        return Err(Error::Empty("outcome list"));
    }
    let c = FrameCounts::tally(outcomes);
    let scores: Vec<f64> = outcomes.iter().map(frame_score).collect();
    let overlapping: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.gt_visible && o.predicted)
        .map(|o| o.overlap)
        .collect();
    let accuracy = match (c.visible, overlapping.len()) {
        (0, _) => 1.0,
        (_, 0) => 0.0,
        (_, k) => mean(overlapping, k),
    };
    let ratio = |num: usize, den: usize, vacuous: f64| {
        if den == 0 {
            vacuous
        } else {
            num as f64 / den as f64
        }
    };
    Ok(ObjectMetrics {
        object_id,
        auc: auc_of_scores(&scores),
        accuracy,
        robustness: ratio(c.tracked, c.visible, 1.0),
        nre: ratio(c.not_reported, c.visible, 0.0),
        dre: ratio(c.drifted, c.visible, 0.0),
        adq: ratio(c.absent_correct, c.absent, 1.0),
        quality: mean(scores.iter().copied(), scores.len()),
        counts: c,
        scores,
    })
}

/// Report-level metrics: flat means over objects plus the per-object rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub auc: f64,
    pub accuracy: f64,
    pub robustness: f64,
    pub nre: f64,
    pub dre: f64,
    pub adq: f64,
    pub quality: f64,
    pub per_object: Vec<ObjectMetrics>,
}

impl SequenceMetrics {
    /// Columns in table order: AUC, A, R, NRE, DRE, ADQ.
    pub fn table_row(&self) -> [f64; 6] {
        [self.auc, self.accuracy, self.robustness, self.nre, self.dre, self.adq]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Unweighted mean over (sequence, object) pairs, field by field.
pub fn aggregate(objects: &[ObjectMetrics]) -> Result<SequenceMetrics> {
    if objects.is_empty() {
        return Err(Error::Empty("object metrics"));
    }
    let n = objects.len();
    let field = |f: fn(&ObjectMetrics) -> f64| mean(objects.iter().map(f), n);
    Ok(SequenceMetrics {
        auc: field(|m| m.auc),
        accuracy: field(|m| m.accuracy),
        robustness: field(|m| m.robustness),
        nre: field(|m| m.nre),
        dre: field(|m| m.dre),
        adq: field(|m| m.adq),
        quality: field(|m| m.quality),
        per_object: objects.to_vec(),
    })
}

/// Scores a whole sequence. `gt[t][i]` and `pred[t][i]` are object `i + 1` at frame `t`.
pub fn evaluate(gt: &[Vec<Bitmask>], pred: &[Vec<Bitmask>]) -> Result<SequenceMetrics> {
    if gt.len() != pred.len() {
        return Err(Error::Shape(format!(
            "{} predicted frames for {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    let m = gt.first().map(|f| f.len()).ok_or(Error::Empty("sequence"))?;
    let mut per_object: Vec<Vec<FrameOutcome>> = vec![Vec::with_capacity(gt.len()); m];
    for (t, (g, p)) in gt.iter().zip(pred).enumerate() {
        if g.len() != m || p.len() != m {
            return Err(Error::Shape(format!(
                "frame {t}: {} ground-truth and {} predicted objects, expected {m}",
                g.len(),
                p.len()
            )));
        }
        for (i, (gm, pm)) in g.iter().zip(p).enumerate() {
            per_object[i].push(FrameOutcome::from_masks(gm, pm)?);
        }
    }
    let objects = per_object
        .iter()
        .enumerate()
        .map(|(i, o)| per_object_metrics(i as u32 + 1, o))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&objects)
}
