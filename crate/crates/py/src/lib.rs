//! Python bindings for trackforge.
//!
//! Structured results (metrics, reports, configs) cross the boundary as
//! plain dicts decoded from the crate's JSON serialisation.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use trackforge::io::sequence::{self, SequenceDir};
use trackforge::membank;
use trackforge::metrics::{self, FrameOutcome};
use trackforge::pipeline::{self, OracleNoise, TrackOptions};
use trackforge::propagation::{ModelParams, TrackerConfig};
use trackforge::refiner::{self, MaskSource, RefineRequest, RefinerKind, SelectionMode};
use trackforge::synth::{self, SceneSpec};
use trackforge::{BBox, Error, LabelMap};

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for trackforge::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(|e| match e {
            Error::Io { .. } => PyOSError::new_err(e.to_string()),
            _ => PyValueError::new_err(e.to_string()),
        })
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &text)
}

fn config_from(config: Option<&Bound<'_, PyDict>>) -> PyResult<TrackerConfig> {
    let cfg = match config {
        Some(d) => {
            let text: String = d.py().import("json")?.call_method1("dumps", (d,))?.extract()?;
            TrackerConfig::from_json(&text).py()?
        }
        None => TrackerConfig::default(),
    };
    cfg.validate().py()?;
    Ok(cfg)
}

fn source_name(s: MaskSource) -> &'static str {
    match s {
        MaskSource::Vmos => "vmos",
        MaskSource::Refined => "refined",
    }
}

/// Binary mask of one object.
#[pyclass(name = "Bitmask", module = "pytrackforge", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyBitmask(trackforge::Bitmask);

#[pymethods]
impl PyBitmask {
    /// Row-major bits, `len(bits) == width * height`.
    #[new]
    fn new(width: usize, height: usize, bits: Vec<bool>) -> PyResult<Self> {
        Ok(Self(trackforge::Bitmask::from_bits(width, height, bits).py()?))
    }

    #[staticmethod]
    fn empty(width: usize, height: usize) -> PyResult<Self> {
        Ok(Self(trackforge::Bitmask::empty(width, height).py()?))
    }

    #[staticmethod]
    fn from_pixels(width: usize, height: usize, pixels: Vec<(usize, usize)>) -> PyResult<Self> {
        Ok(Self(trackforge::Bitmask::from_pixels(width, height, &pixels).py()?))
    }

    /// Parses a single `w h runs...` line.
    #[staticmethod]
    fn from_rle(line: &str) -> PyResult<Self> {
        let rle: trackforge::RleMask = line.parse().py()?;
        Ok(Self(rle.decode().py()?))
    }

    fn to_rle(&self) -> String {
        self.0.to_rle().to_string()
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    #[getter]
    fn area(&self) -> usize {
        self.0.area()
    }

    fn bits(&self) -> Vec<bool> {
        self.0.bits().to_vec()
    }

    fn get(&self, x: usize, y: usize) -> PyResult<bool> {
        if x >= self.0.width() || y >= self.0.height() {
            return Err(PyValueError::new_err(format!("pixel ({x}, {y}) outside mask")));
        }
        Ok(self.0.get(x, y))
    }

    fn iou(&self, other: &PyBitmask) -> PyResult<f64> {
        self.0.iou(&other.0).py()
    }

    fn dilate(&self, radius: usize) -> Self {
        Self(self.0.dilate(radius))
    }

    fn erode(&self, radius: usize) -> Self {
        Self(self.0.erode(radius))
    }

    /// Inclusive `(x_min, y_min, x_max, y_max)`, or None for an empty mask.
    fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        self.0.enclosing_box().map(|b| (b.x_min, b.y_min, b.x_max, b.y_max))
    }

    fn __len__(&self) -> usize {
        self.0.area()
    }

    fn __repr__(&self) -> String {
        format!("Bitmask({}x{}, area={})", self.0.width(), self.0.height(), self.0.area())
    }
}

/// 8-bit gray frame.
#[pyclass(name = "GrayImage", module = "pytrackforge", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrayImage(trackforge::GrayImage);

#[pymethods]
impl PyGrayImage {
    #[new]
    fn new(width: usize, height: usize, pixels: Vec<u8>) -> PyResult<Self> {
        Ok(Self(trackforge::GrayImage::new(width, height, pixels).py()?))
    }

    #[getter]
    fn width(&self) -> usize {
        self.0.width()
    }

    #[getter]
    fn height(&self) -> usize {
        self.0.height()
    }

    fn pixels(&self) -> Vec<u8> {
        self.0.pixels().to_vec()
    }

    fn __repr__(&self) -> String {
        format!("GrayImage({}x{})", self.0.width(), self.0.height())
    }
}

fn unwrap_masks(masks: &[PyRef<'_, PyBitmask>]) -> Vec<trackforge::Bitmask> {
    masks.iter().map(|m| m.0.clone()).collect()
}

fn wrap_masks(masks: Vec<trackforge::Bitmask>) -> Vec<PyBitmask> {
    masks.into_iter().map(PyBitmask).collect()
}

/// Long-term memory schedule over bare frame indices.
#[pyclass(name = "MemoryBank", module = "pytrackforge")]
struct PyMemoryBank(membank::MemoryBank<usize>);

#[pymethods]
impl PyMemoryBank {
    #[new]
    fn new(capacity: usize) -> PyResult<Self> {
        if capacity == 0 {
            return Err(PyValueError::new_err("capacity must be >= 1"));
        }
        Ok(Self(membank::MemoryBank::new(capacity)))
    }

    fn initialize(&mut self, frame: usize) {
        self.0.initialize(frame);
    }

    /// Returns the evicted frame, if any.
    fn store(&mut self, frame: usize) -> PyResult<Option<usize>> {
        self.0.store(frame).py()
    }

    fn update_short_term(&mut self, frame: usize) {
        self.0.update_short_term(frame);
    }

    /// Frames attended to, deduplicated, oldest first.
    fn frames(&self) -> PyResult<Vec<usize>> {
        self.0.frame_indices().py()
    }

    fn long_term(&self) -> Vec<usize> {
        self.0.long_term().copied().collect()
    }

    #[getter]
    fn stores(&self) -> usize {
        self.0.stores()
    }

    #[getter]
    fn evictions(&self) -> usize {
        self.0.evictions()
    }
}

/// Frame-by-frame propagation tracker with seeded parameters.
#[pyclass(name = "Tracker", module = "pytrackforge")]
struct PyTracker(trackforge::propagation::Tracker);

#[pymethods]
impl PyTracker {
    /// Starts from the annotated first frame; `annotation` holds one mask per object.
    #[new]
    #[pyo3(signature = (first_frame, annotation, config=None))]
    fn new(
        first_frame: &PyGrayImage,
        annotation: Vec<PyRef<'_, PyBitmask>>,
        config: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let cfg = config_from(config)?;
        let labels = LabelMap::merge(&unwrap_masks(&annotation)).py()?;
        let params = Arc::new(ModelParams::seeded(&cfg));
        let (tracker, _) = trackforge::propagation::Tracker::new(cfg, params, &first_frame.0, &labels).py()?;
        Ok(Self(tracker))
    }

    /// Masks of the next frame, one per object.
    fn predict(&mut self, py: Python<'_>, frame: &PyGrayImage) -> PyResult<Vec<PyBitmask>> {
        let tracker = &mut self.0;
        let image = &frame.0;
        let result = py.detach(|| tracker.predict(image)).py()?;
        Ok(wrap_masks(result.masks))
    }

    #[getter]
    fn frame_index(&self) -> usize {
        self.0.frame_index()
    }

    /// Frames currently held in memory.
    fn memory_frames(&self) -> PyResult<Vec<usize>> {
        self.0.memory().frame_indices().py()
    }

    /// Gated propagation calls per scale on the last frame.
    fn last_trace(&self) -> Vec<(usize, usize)> {
        let t = self.0.last_trace();
        trackforge::propagation::SCALES.iter().map(|&s| (s, t.calls_at(s))).collect()
    }
}

#[pyfunction]
fn should_store(frame_index: usize, gap: usize) -> bool {
    membank::should_store(frame_index, gap)
}

#[pyfunction]
fn default_config(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &TrackerConfig::default())
}

fn outcomes_from(items: Vec<(bool, bool, f64)>) -> PyResult<Vec<FrameOutcome>> {
    items
        .into_iter()
        .map(|(v, p, o)| FrameOutcome::new(v, p, o).py())
        .collect()
}

/// Metrics of one object from `(gt_visible, predicted, overlap)` per frame.
#[pyfunction]
fn object_metrics(py: Python<'_>, object_id: u32, outcomes: Vec<(bool, bool, f64)>) -> PyResult<Bound<'_, PyAny>> {
    let m = metrics::per_object_metrics(object_id, &outcomes_from(outcomes)?).py()?;
    to_py(py, &m)
}

#[pyfunction]
fn frame_score(gt_visible: bool, predicted: bool, overlap: f64) -> PyResult<f64> {
    Ok(metrics::frame_score(&FrameOutcome::new(gt_visible, predicted, overlap).py()?))
}

/// Sequence metrics from per-frame lists of per-object masks.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    gt: Vec<Vec<PyRef<'py, PyBitmask>>>,
    pred: Vec<Vec<PyRef<'py, PyBitmask>>>,
) -> PyResult<Bound<'py, PyAny>> {
    let g: Vec<_> = gt.iter().map(|f| unwrap_masks(f)).collect();
    let p: Vec<_> = pred.iter().map(|f| unwrap_masks(f)).collect();
    let m = metrics::evaluate(&g, &p).py()?;
    to_py(py, &m)
}

#[pyfunction]
fn eval_dirs(py: Python<'_>, pred: PathBuf, gt: PathBuf) -> PyResult<Bound<'_, PyAny>> {
    let m = py.detach(|| pipeline::eval_dirs(&pred, &gt)).py()?;
    to_py(py, &m)
}

/// Returns `(mask, source, iou)` where source is "vmos" or "refined".
#[pyfunction]
fn select(object_id: u32, vmos: &PyBitmask, refined: &PyBitmask, tau: f64) -> PyResult<(PyBitmask, &'static str, f64)> {
    let (mask, d) = refiner::select(object_id, &vmos.0, &refined.0, tau).py()?;
    Ok((PyBitmask(mask), source_name(d.chosen), d.iou_vmos_refined))
}

/// Runs a mock refiner, `kind` as on the command line (e.g. `dilate:1`).
#[pyfunction]
#[pyo3(signature = (kind, image, prompt, proposal, frame_index=0, object_id=1, ground_truth=None))]
fn refine(
    kind: &str,
    image: &PyGrayImage,
    prompt: (usize, usize, usize, usize),
    proposal: &PyBitmask,
    frame_index: usize,
    object_id: u32,
    ground_truth: Option<&PyBitmask>,
) -> PyResult<PyBitmask> {
    let kind: RefinerKind = kind.parse().py()?;
    kind.validate().py()?;
    let req = RefineRequest {
        frame_index,
        object_id,
        image: &image.0,
        prompt: BBox::new(prompt.0, prompt.1, prompt.2, prompt.3).py()?,
        proposal: &proposal.0,
        ground_truth: ground_truth.map(|g| &g.0),
    };
    Ok(PyBitmask(refiner::refine(&kind, &req).py()?))
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    synth::PRESETS.iter().map(|(n, _)| *n).collect()
}

fn scene_from(spec: &str) -> PyResult<SceneSpec> {
    if spec.trim_start().starts_with('{') {
        SceneSpec::from_json(spec).py()
    } else {
        synth::preset(spec).py()
    }
}

/// Renders frame `t` of a preset name or scene JSON as `(image, masks)`.
#[pyfunction]
fn render(spec: &str, t: usize) -> PyResult<(PyGrayImage, Vec<PyBitmask>)> {
    let scene = scene_from(spec)?;
    let frame = scene.render(t).py()?;
    Ok((PyGrayImage(frame.image), wrap_masks(frame.gt.split())))
}

/// Writes a preset or scene JSON as a sequence directory; returns the frame count.
#[pyfunction]
fn synth_sequence(py: Python<'_>, spec: &str, out_dir: PathBuf) -> PyResult<usize> {
    let scene = scene_from(spec)?;
    let seq = py.detach(|| sequence::write_scene(&scene, out_dir)).py()?;
    Ok(seq.len())
}

/// Tracks a sequence directory and returns the run report.
///
/// `predictor` is "vmos" or "oracle". Oracle modes read ground truth and
/// need `allow_oracle=True`. With `out`, masks and report.json are written.
#[pyfunction]
#[pyo3(signature = (
    seq, config=None, predictor="vmos", erosion=0, miss_prob=0.0, noise_seed=0,
    refiner=None, tau=None, refine_all=false, out=None, allow_oracle=false
))]
#[allow(clippy::too_many_arguments)]
fn track<'py>(
    py: Python<'py>,
    seq: PathBuf,
    config: Option<&Bound<'py, PyDict>>,
    predictor: &str,
    erosion: usize,
    miss_prob: f64,
    noise_seed: u64,
    refiner: Option<&str>,
    tau: Option<f64>,
    refine_all: bool,
    out: Option<PathBuf>,
    allow_oracle: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config_from(config)?;
    let mut opts = match predictor {
        "vmos" => TrackOptions::vmos(cfg),
        "oracle" => TrackOptions::oracle(
            cfg,
            OracleNoise {
                erosion,
                miss_prob,
                seed: noise_seed,
            },
        ),
        other => return Err(PyValueError::new_err(format!("unknown predictor {other:?}"))),
    };
    match refiner {
        Some(kind) => {
            let kind: RefinerKind = kind.parse().py()?;
            let mode = if refine_all {
                SelectionMode::RefineAll
            } else {
                SelectionMode::Gated {
                    tau: tau.unwrap_or(opts.config.tau),
                }
            };
            opts = opts.with_refinement(kind, mode);
        }
        None if refine_all || tau.is_some() => {
            return Err(PyValueError::new_err("tau and refine_all need a refiner"));
        }
        None => {}
    }
    if opts.uses_oracle() && !allow_oracle {
        return Err(PyValueError::new_err("oracle predictor or refiner reads ground truth; pass allow_oracle=True"));
    }
    let sequence = SequenceDir::open(&seq).py()?;
    let report = py
        .detach(|| match &out {
            Some(dir) => pipeline::track_to_dir(&sequence, &opts, dir),
            None => pipeline::track(&sequence, &opts).map(|(_, r)| r),
        })
        .py()?;
    json_to_py(py, &report.to_json().py()?)
}

#[pymodule]
fn pytrackforge(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("AUC_THRESHOLDS", metrics::AUC_THRESHOLDS)?;
    m.add_class::<PyBitmask>()?;
    m.add_class::<PyGrayImage>()?;
    m.add_class::<PyMemoryBank>()?;
    m.add_class::<PyTracker>()?;
    m.add_function(wrap_pyfunction!(should_store, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(object_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(frame_score, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(eval_dirs, m)?)?;
    m.add_function(wrap_pyfunction!(select, m)?)?;
    m.add_function(wrap_pyfunction!(refine, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(render, m)?)?;
    m.add_function(wrap_pyfunction!(synth_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(track, m)?)?;
    Ok(())
}
