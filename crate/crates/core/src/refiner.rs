//! Box-prompted mask refinement and the IoU-gated mask selector.
//!
//! The refiners here are deterministic mocks that stand in for a large
//! promptable segmenter. The part that matters is [`select`]: a refined mask
//! replaces the propagated one only when the two agree with IoU strictly above
//! `tau`, which keeps the refiner from swapping in a different object.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::mask::{BBox, Bitmask};
use crate::propagation::FrameResult;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RefinerKind {
    /// Returns the proposal unchanged.
    Identity,
    /// Square dilation by `radius`, clipped to the prompt box.
    Dilate { radius: usize },
    /// Flips each pixel inside the prompt box with probability `flip_prob`.
    Noise { flip_prob: f64, seed: u64 },
    /// Snaps good proposals to ground truth and replaces poor ones with an
    /// unrelated blob. Needs ground truth.
    OracleSnap {
        improve_above: f64,
        degrade_below: f64,
        seed: u64,
    },
}

impl RefinerKind {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("refiner {name} {v} outside [0, 1]")))
            }
        };
        match *self {
            RefinerKind::Identity | RefinerKind::Dilate { .. } => Ok(()),
            RefinerKind::Noise { flip_prob, .. } => unit("flip probability", flip_prob),
            RefinerKind::OracleSnap {
                improve_above,
                degrade_below,
                ..
            } => {
                unit("improve threshold", improve_above)?;
                unit("degrade threshold", degrade_below)
            }
        }
    }

    pub fn needs_ground_truth(&self) -> bool {
        matches!(self, RefinerKind::OracleSnap { .. })
    }
}

impl fmt::Display for RefinerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefinerKind::Identity => write!(f, "identity"),
            RefinerKind::Dilate { radius } => write!(f, "dilate:{radius}"),
            RefinerKind::Noise { flip_prob, seed } => write!(f, "noise:{flip_prob}:{seed}"),
            RefinerKind::OracleSnap {
                improve_above,
                degrade_below,
                seed,
            } => write!(f, "oracle:{improve_above}:{degrade_below}:{seed}"),
        }
    }
}

impl FromStr for RefinerKind {
    type Err = Error;

    /// Parses `identity`, `dilate:r`, `noise:p:seed` or `oracle:hi:lo:seed`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = |msg: &str| Error::parse(format!("refiner {s:?}"), msg);
        let float = |v: &str| v.parse::<f64>().map_err(|e| bad(&e.to_string()));
        let int = |v: &str| v.parse::<u64>().map_err(|e| bad(&e.to_string()));
        let kind = match parts.as_slice() {
            ["identity"] => RefinerKind::Identity,
            ["dilate", r] => RefinerKind::Dilate {
                radius: int(r)? as usize,
            },
            ["noise", p, sd] => RefinerKind::Noise {
                flip_prob: float(p)?,
                seed: int(sd)?,
            },
            ["oracle", hi, lo, sd] => RefinerKind::OracleSnap {
                improve_above: float(hi)?,
                degrade_below: float(lo)?,
                seed: int(sd)?,
            },
            _ => return Err(bad("expected identity | dilate:r | noise:p:seed | oracle:hi:lo:seed")),
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Everything a refiner sees for one object in one frame.
#[derive(Debug, Clone, Copy)]
pub struct RefineRequest<'a> {
    pub frame_index: usize,
    pub object_id: u32,
    pub image: &'a GrayImage,
    pub prompt: BBox,
    pub proposal: &'a Bitmask,
    pub ground_truth: Option<&'a Bitmask>,
}

pub fn refine(kind: &RefinerKind, req: &RefineRequest<'_>) -> Result<Bitmask> {
    let (w, h) = (req.proposal.width(), req.proposal.height());
    if !req.prompt.fits(w, h) {
        return Err(Error::Refiner(format!("prompt {:?} outside {w}x{h} frame", req.prompt)));
    }
    match *kind {
        RefinerKind::Identity => Ok(req.proposal.clone()),
        RefinerKind::Dilate { radius } => Ok(req.proposal.dilate(radius).clip_to(&req.prompt)),
        RefinerKind::Noise { flip_prob, seed } => {
            let mut rng = seed::stream(seed, req.frame_index, req.object_id);
            let mut out = req.proposal.clone();
            for y in req.prompt.y_min..=req.prompt.y_max {
                for x in req.prompt.x_min..=req.prompt.x_max {
                    if flip_prob > 0.0 && rng.random_bool(flip_prob) {
                        out.set(x, y, !out.get(x, y));
                    }
                }
            }
            Ok(out)
        }
        RefinerKind::OracleSnap {
            improve_above,
            degrade_below,
            seed,
        } => {
            let gt = req
                .ground_truth
                .ok_or_else(|| Error::Refiner("oracle refiner needs ground truth".into()))?;
            let quality = req.proposal.iou(gt)?;
            if quality >= improve_above {
                Ok(gt.clone())
            } else if quality < degrade_below {
                let mut rng = seed::stream(seed, req.frame_index, req.object_id);
                Ok(disjoint_blob(&req.prompt, req.proposal, gt, &mut rng))
            } else {
                Ok(req.proposal.clone())
            }
        }
    }
}

/// A square blob that overlaps neither `proposal` nor `gt`. It is anchored
/// inside `prompt` when the box has free pixels, otherwise anywhere in the frame.
fn disjoint_blob(prompt: &BBox, proposal: &Bitmask, gt: &Bitmask, rng: &mut impl Rng) -> Bitmask {
    let (w, h) = (proposal.width(), proposal.height());
    let free = |x: usize, y: usize| !proposal.get(x, y) && !gt.get(x, y);
    let in_box: Vec<(usize, usize)> = (prompt.y_min..=prompt.y_max)
        .flat_map(|y| (prompt.x_min..=prompt.x_max).map(move |x| (x, y)))
        .filter(|&(x, y)| free(x, y))
        .collect();
    let (candidates, region) = if in_box.is_empty() {
        let all: Vec<(usize, usize)> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .filter(|&(x, y)| free(x, y))
            .collect();
        let frame = BBox {
            x_min: 0,
            y_min: 0,
            x_max: w - 1,
            y_max: h - 1,
        };
        (all, frame)
    } else {
        (in_box, *prompt)
    };
    let mut out = Bitmask::empty(w, h).expect("frame dims already validated");
    if candidates.is_empty() {
        return out;
    }
    let (ax, ay) = candidates[rng.random_range(0..candidates.len())];
    let radius = (prompt.width().min(prompt.height()) / 4).max(1);
    for y in ay.saturating_sub(radius)..=(ay + radius).min(h - 1) {
        for x in ax.saturating_sub(radius)..=(ax + radius).min(w - 1) {
            if region.contains(x, y) && free(x, y) {
                out.set(x, y, true);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSource {
    Vmos,
    Refined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionDecision {
    pub object_id: u32,
    pub iou_vmos_refined: f64,
    pub chosen: MaskSource,
}

/// Keeps `refined` only if its IoU with `vmos` is strictly greater than `tau`.
pub fn select(
    object_id: u32,
    vmos: &Bitmask,
    refined: &Bitmask,
    tau: f64,
) -> Result<(Bitmask, SelectionDecision)> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("tau {tau} outside [0, 1]")));
    }
    let iou = vmos.iou(refined)?;
    let (mask, chosen) = if iou > tau {
        (refined.clone(), MaskSource::Refined)
    } else {
        (vmos.clone(), MaskSource::Vmos)
    };
    Ok((
        mask,
        SelectionDecision {
            object_id,
            iou_vmos_refined: iou,
            chosen,
        },
    ))
}

/// How refined masks are admitted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SelectionMode {
    /// IoU gate with threshold `tau`.
    Gated { tau: f64 },
    /// Every refined mask is taken.
    RefineAll,
}

/// One box prompt per non-empty object mask, object ids starting at 1.
pub fn extract_prompts(frame: &FrameResult) -> Vec<(u32, BBox)> {
    frame
        .masks
        .iter()
        .enumerate()
        .filter_map(|(i, m)| m.enclosing_box().map(|b| (i as u32 + 1, b)))
        .collect()
}

/// Prompt, refine and select every object of a frame. Objects without a
/// prompt pass through unchanged; the result is re-merged with the usual
/// highest-id-wins rule.
pub fn refine_frame(
    frame: &FrameResult,
    kind: &RefinerKind,
    mode: SelectionMode,
    image: &GrayImage,
    ground_truth: Option<&[Bitmask]>,
) -> Result<(FrameResult, Vec<SelectionDecision>)> {
    if kind.needs_ground_truth() && ground_truth.is_none() {
        return Err(Error::Refiner(format!("{kind} needs ground truth")));
    }
    if let Some(gt) = ground_truth {
        if gt.len() != frame.masks.len() {
            return Err(Error::Shape(format!(
                "{} ground-truth masks for {} objects",
                gt.len(),
                frame.masks.len()
            )));
        }
    }
    let mut masks = frame.masks.clone();
    let mut decisions = Vec::new();
    for (object_id, prompt) in extract_prompts(frame) {
        let idx = object_id as usize - 1;
        let proposal = &frame.masks[idx];
        let req = RefineRequest {
            frame_index: frame.frame_index,
            object_id,
            image,
            prompt,
            proposal,
            ground_truth: ground_truth.map(|g| &g[idx]),
        };
        let refined = refine(kind, &req)?;
        let (mask, decision) = match mode {
            SelectionMode::Gated { tau } => select(object_id, proposal, &refined, tau)?,
            SelectionMode::RefineAll => {
                let iou = proposal.iou(&refined)?;
                (
                    refined,
                    SelectionDecision {
                        object_id,
                        iou_vmos_refined: iou,
                        chosen: MaskSource::Refined,
                    },
                )
            }
        };
        masks[idx] = mask;
        decisions.push(decision);
    }
    let out = FrameResult::from_masks(frame.frame_index, &masks, frame.confidences.clone())?;
    Ok((out, decisions))
}
