//! End-to-end driver: propagate (or script) masks, refine them through the
//! selector, score them and run parameter sweeps.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::report::{DecisionRecord, MemoryLog, PredictorInfo, RunReport, Source};
use crate::io::sequence::{self, SequenceDir, SequenceMeta};
use crate::mask::Bitmask;
use crate::membank::{should_store, MemoryBank};
use crate::metrics::{self, FrameOutcome, SequenceMetrics};
use crate::propagation::{FrameResult, ModelParams, Tracker, TrackerConfig};
use crate::refiner::{refine_frame, MaskSource, RefinerKind, SelectionMode};
use crate::seed;

/// Seeded corruption applied to ground truth in oracle mode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleNoise {
    pub erosion: usize,
    pub miss_prob: f64,
    pub seed: u64,
}

impl OracleNoise {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.miss_prob) {
            return Err(Error::Config(format!("miss probability {} outside [0, 1]", self.miss_prob)));
        }
        Ok(())
    }
}

/// Ground truth eroded by `noise.erosion`, each object dropped with
/// probability `noise.miss_prob`.
pub fn oracle_mode_predict(gt: &[Bitmask], frame_index: usize, noise: &OracleNoise) -> Vec<Bitmask> {
    gt.iter()
        .enumerate()
        .map(|(i, m)| {
            let mut rng = seed::stream(noise.seed, frame_index, i as u32 + 1);
            let missed = noise.miss_prob > 0.0 && rng.random_bool(noise.miss_prob);
            if missed {
                Bitmask::empty(m.width(), m.height()).expect("dims come from a valid mask")
            } else {
                m.erode(noise.erosion)
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub enum Predictor {
    /// The propagation network. `None` uses seeded parameters.
    Vmos { params: Option<Arc<ModelParams>> },
    Oracle(OracleNoise),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub refiner: RefinerKind,
    pub mode: SelectionMode,
}

#[derive(Debug, Clone)]
pub struct TrackOptions {
    pub config: TrackerConfig,
    pub predictor: Predictor,
    pub refinement: Option<Refinement>,
}

impl TrackOptions {
    pub fn vmos(config: TrackerConfig) -> Self {
        Self {
            config,
            predictor: Predictor::Vmos { params: None },
            refinement: None,
        }
    }

    pub fn oracle(config: TrackerConfig, noise: OracleNoise) -> Self {
        Self {
            config,
            predictor: Predictor::Oracle(noise),
            refinement: None,
        }
    }

    pub fn with_refinement(mut self, refiner: RefinerKind, mode: SelectionMode) -> Self {
        self.refinement = Some(Refinement { refiner, mode });
        self
    }

    /// Whether the run reads ground truth past frame 0.
    pub fn uses_oracle(&self) -> bool {
        matches!(self.predictor, Predictor::Oracle(_))
            || self.refinement.is_some_and(|r| r.refiner.needs_ground_truth())
    }
}

enum Engine {
    Vmos(Box<Tracker>),
    Oracle(OracleNoise, MemoryBank<usize>),
}

/// Tracks `seq`, handing each frame's final masks to `sink` in order.
/// Metrics are computed when every frame has ground truth.
pub fn track_with(
    seq: &SequenceDir,
    opts: &TrackOptions,
    mut sink: impl FnMut(usize, &[Bitmask]) -> Result<()>,
) -> Result<RunReport> {
    let start = Instant::now();
    let cfg = &opts.config;
    cfg.validate()?;
    if let Some(r) = &opts.refinement {
        r.refiner.validate()?;
        if let SelectionMode::Gated { tau } = r.mode {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::Config(format!("tau {tau} outside [0, 1]")));
            }
        }
    }
    let full_gt = seq.has_full_gt();
    if opts.uses_oracle() && !full_gt {
        return Err(Error::Config("oracle modes need ground truth for every frame".into()));
    }
    let meta = seq.meta();
    let annotation = seq.annotation()?;
    let first = seq.frame(0)?;
    let (mut engine, first_result, predictor) = match &opts.predictor {
        Predictor::Vmos { params } => {
            let (p, label) = match params {
                Some(p) => (p.clone(), "file"),
                None => (Arc::new(ModelParams::seeded(cfg)), "seeded"),
            };
            let (tracker, r0) = Tracker::new(cfg.clone(), p, &first, &annotation)?;
            let info = PredictorInfo::Vmos { weights: label.into() };
            (Engine::Vmos(Box::new(tracker)), r0, info)
        }
        Predictor::Oracle(noise) => {
            noise.validate()?;
            let mut bank = MemoryBank::new(cfg.long_term_capacity);
            bank.initialize(0);
            // the scripted predictor corrupts frame 0 like any other frame
            let gt0 = seq.gt(0)?;
            let r0 = FrameResult::from_masks(0, &oracle_mode_predict(&gt0, 0, noise), vec![0.0; meta.num_objects])?;
            let info = PredictorInfo::Oracle {
                erosion: noise.erosion,
                miss_prob: noise.miss_prob,
                seed: noise.seed,
            };
            (Engine::Oracle(*noise, bank), r0, info)
        }
    };

    let m = meta.num_objects;
    let mut outcomes: Vec<Vec<FrameOutcome>> = vec![Vec::with_capacity(meta.num_frames); m];
    let mut decisions = Vec::with_capacity(meta.num_frames * m);
    let mut record = |t: usize, masks: &[Bitmask], gt: Option<&[Bitmask]>| -> Result<()> {
        if let Some(gt) = gt {
            for (i, (g, p)) in gt.iter().zip(masks).enumerate() {
                outcomes[i].push(FrameOutcome::from_masks(g, p)?);
            }
        }
        sink(t, masks)
    };

    let gt0 = if full_gt { Some(seq.gt(0)?) } else { None };
    let first_source = match engine {
        Engine::Vmos(_) => Source::Annotation,
        Engine::Oracle(..) => Source::Vmos,
    };
    for i in 0..m {
        decisions.push(DecisionRecord {
            frame: 0,
            object: i as u32 + 1,
            source: first_source,
            iou: None,
        });
    }
    record(0, &first_result.masks, gt0.as_deref())?;

    for t in 1..meta.num_frames {
        let image = seq.frame(t)?;
        let gt = if full_gt { Some(seq.gt(t)?) } else { None };
        let proposal = match &mut engine {
            Engine::Vmos(tracker) => tracker.predict(&image)?,
            Engine::Oracle(noise, bank) => {
                if should_store(t, cfg.memory_gap) {
                    bank.store(t)?;
                }
                bank.update_short_term(t);
                let gt = gt.as_deref().expect("oracle mode checked full ground truth");
                let masks = oracle_mode_predict(gt, t, noise);
                FrameResult::from_masks(t, &masks, vec![0.0; m])?
            }
        };
        let final_masks = match &opts.refinement {
            None => {
                decisions.extend((0..m).map(|i| DecisionRecord {
                    frame: t,
                    object: i as u32 + 1,
                    source: Source::Vmos,
                    iou: None,
                }));
                proposal.masks
            }
            Some(r) => {
                let gt_for_refiner = if r.refiner.needs_ground_truth() { gt.as_deref() } else { None };
                let (out, sel) = refine_frame(&proposal, &r.refiner, r.mode, &image, gt_for_refiner)?;
                for i in 0..m {
                    let id = i as u32 + 1;
                    let d = sel.iter().find(|d| d.object_id == id);
                    decisions.push(DecisionRecord {
                        frame: t,
                        object: id,
                        source: match d.map(|d| d.chosen) {
                            Some(MaskSource::Refined) => Source::Refined,
                            _ => Source::Vmos,
                        },
                        iou: d.map(|d| d.iou_vmos_refined),
                    });
                }
                out.masks
            }
        };
        record(t, &final_masks, gt.as_deref())?;
    }

    let memory = match &engine {
        Engine::Vmos(tracker) => log_of(tracker.memory()),
        Engine::Oracle(_, bank) => log_of(bank),
    };
    let metrics = if full_gt {
        let objects = outcomes
            .iter()
            .enumerate()
            .map(|(i, o)| metrics::per_object_metrics(i as u32 + 1, o))
            .collect::<Result<Vec<_>>>()?;
        Some(metrics::aggregate(&objects)?)
    } else {
        None
    };
    Ok(RunReport {
        version: env!("CARGO_PKG_VERSION").into(),
        sequence: meta,
        config: cfg.clone(),
        predictor,
        refiner: opts.refinement.map(|r| r.refiner),
        selection: opts.refinement.map(|r| r.mode),
        gt_used_for_prediction: opts.uses_oracle(),
        memory,
        decisions,
        metrics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

fn log_of<E: crate::membank::MemorySlot>(bank: &MemoryBank<E>) -> MemoryLog {
    MemoryLog {
        stores: bank.stores(),
        evictions: bank.evictions(),
        long_term: bank.long_term().map(|e| e.frame_index()).collect(),
    }
}

/// Tracks `seq` and writes `masks/%06d.rle` plus `report.json` under `out`.
pub fn track_to_dir(seq: &SequenceDir, opts: &TrackOptions, out: &Path) -> Result<RunReport> {
    let masks_dir = out.join("masks");
    crate::io::create_dir(&masks_dir)?;
    let report = track_with(seq, opts, |t, masks| sequence::write_masks(&masks_dir, t, masks))?;
    crate::io::write_atomic(&out.join("report.json"), report.to_json()?.as_bytes())?;
    Ok(report)
}

/// Tracks `seq` keeping predictions in memory.
pub fn track(seq: &SequenceDir, opts: &TrackOptions) -> Result<(Vec<Vec<Bitmask>>, RunReport)> {
    let mut preds = Vec::with_capacity(seq.len());
    let report = track_with(seq, opts, |_, masks| {
        preds.push(masks.to_vec());
        Ok(())
    })?;
    Ok((preds, report))
}

/// A directory of mask files: a sequence's `gt/`, a run's `masks/`, or bare `%06d.rle` files.
fn mask_files_dir(path: &Path) -> (PathBuf, Option<SequenceMeta>) {
    if path.join("meta.json").is_file() {
        let meta = SequenceDir::open(path).ok().map(|s| s.meta());
        (path.join("gt"), meta)
    } else if path.join("masks").is_dir() {
        (path.join("masks"), None)
    } else {
        (path.to_path_buf(), None)
    }
}

fn load_masks(path: &Path) -> Result<Vec<Vec<Bitmask>>> {
    let (dir, meta) = mask_files_dir(path);
    let count = sequence::count_mask_files(&dir);
    if count == 0 {
        return Err(Error::parse(dir.display().to_string(), "no 000000.rle mask files"));
    }
    let (m, w, h) = match meta {
        Some(meta) => {
            if count != meta.num_frames {
                return Err(Error::parse(
                    dir.display().to_string(),
                    format!("{count} mask files, meta.json declares {}", meta.num_frames),
                ));
            }
            (meta.num_objects, meta.width, meta.height)
        }
        None => {
            let first = crate::io::rle::decode(&crate::io::read_text(&dir.join("000000.rle"))?, None)?;
            let f = first
                .first()
                .ok_or_else(|| Error::parse(dir.display().to_string(), "empty mask file"))?;
            (first.len(), f.width(), f.height())
        }
    };
    sequence::read_mask_dir(&dir, count, m, w, h)
}

/// Scores predicted masks against ground truth.
pub fn eval_dirs(pred: &Path, gt: &Path) -> Result<SequenceMetrics> {
    let p = load_masks(pred)?;
    let g = load_masks(gt)?;
    if p.len() != g.len() {
        return Err(Error::parse(
            "eval",
            format!("{} predicted frames for {} ground-truth frames", p.len(), g.len()),
        ));
    }
    if p[0].len() != g[0].len() {
        return Err(Error::parse(
            "eval",
            format!("{} predicted objects for {} ground-truth objects", p[0].len(), g[0].len()),
        ));
    }
    metrics::evaluate(&g, &p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub metrics: SequenceMetrics,
    /// Long-term memory writes of the run.
    pub stores: usize,
}

fn run_metrics(seq: &SequenceDir, opts: &TrackOptions) -> Result<(SequenceMetrics, usize)> {
    let report = track_with(seq, opts, |_, _| Ok(()))?;
    let metrics = report
        .metrics
        .ok_or(Error::Empty("ablations need ground truth for every frame"))?;
    Ok((metrics, report.memory.stores))
}

/// One run per gap, rows in input order.
pub fn ablate_gap(seq: &SequenceDir, base: &TrackOptions, gaps: &[usize]) -> Result<Vec<AblationRow>> {
    gaps.par_iter()
        .map(|&gap| {
            let mut opts = base.clone();
            opts.config.memory_gap = gap;
            let (metrics, stores) = run_metrics(seq, &opts)?;
            Ok(AblationRow {
                label: gap.to_string(),
                metrics,
                stores,
            })
        })
        .collect()
}

/// One gated run per `tau`, plus a trailing `refine-all` row when asked.
pub fn ablate_tau(
    seq: &SequenceDir,
    base: &TrackOptions,
    refiner: RefinerKind,
    taus: &[f64],
    refine_all: bool,
) -> Result<Vec<AblationRow>> {
    let mut modes: Vec<(String, SelectionMode)> = taus
        .iter()
        .map(|&tau| (tau.to_string(), SelectionMode::Gated { tau }))
        .collect();
    if refine_all {
        modes.push(("refine-all".into(), SelectionMode::RefineAll));
    }
    modes
        .par_iter()
        .map(|(label, mode)| {
            let opts = base.clone().with_refinement(refiner, *mode);
            let (metrics, stores) = run_metrics(seq, &opts)?;
            Ok(AblationRow {
                label: label.clone(),
                metrics,
                stores,
            })
        })
        .collect()
}

fn csv(first: &str, rows: &[AblationRow], with_quality: bool) -> String {
    let mut out = format!("{first},AUC,A,R,NRE,DRE,ADQ");
    if with_quality {
        out.push_str(",Q");
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.label);
        for v in r.metrics.table_row() {
            out.push_str(&format!(",{v}"));
        }
        if with_quality {
            out.push_str(&format!(",{}", r.metrics.quality));
        }
        out.push('\n');
    }
    out
}

pub fn gap_csv(rows: &[AblationRow]) -> String {
    csv("gap", rows, false)
}

pub fn tau_csv(rows: &[AblationRow]) -> String {
    csv("tau", rows, true)
}
