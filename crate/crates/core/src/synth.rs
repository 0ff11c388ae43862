//! Deterministic synthetic sequences: flat-shaded rectangles and disks moving
//! along piecewise-linear paths over a textured background.
//!
//! Objects are drawn back to front. `depth` 0 is nearest the camera. A pixel
//! belongs to a shape when its centre lies inside it; rectangles use
//! half-open extents so an integer-aligned `w x h` rect covers exactly `w * h`
//! pixels. Distractors copy an object's look, follow an offset path, sit behind
//! every object and never appear in the ground truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{quantize, GrayImage};
use crate::mask::LabelMap;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rect,
    /// `size.w` is the diameter; `size.h` is ignored.
    Disk,
}

/// Position keyframe: centre `(x, y)` at frame `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathKey {
    pub t: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeKey {
    pub t: usize,
    pub w: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub shape: Shape,
    pub path: Vec<PathKey>,
    pub size: Vec<SizeKey>,
    pub depth: usize,
    /// Half-open `[start, end)` frame intervals. Empty means always visible.
    #[serde(default)]
    pub visible: Vec<[usize; 2]>,
    pub gray: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorSpec {
    /// Index into `objects` of the object being imitated.
    pub source: usize,
    /// Offset from the source centre over time.
    pub offset: Vec<PathKey>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Background {
    pub base: f64,
    /// Amplitude of the static seeded texture.
    pub texture: f64,
    /// Amplitude of per-frame noise.
    #[serde(default)]
    pub noise: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self {
            base: 0.2,
            texture: 0.1,
            noise: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub seed: u64,
    #[serde(default)]
    pub background: Background,
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub distractors: Vec<DistractorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub image: GrayImage,
    pub gt: LabelMap,
    /// Whether object `i + 1` has at least one ground-truth pixel.
    pub visible: Vec<bool>,
}

fn lerp_keys<K: Copy>(keys: &[K], t: usize, time: fn(&K) -> usize, vals: fn(&K) -> (f64, f64)) -> (f64, f64) {
    let first = &keys[0];
    if t <= time(first) {
        return vals(first);
    }
    for w in keys.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if t <= time(b) {
            let span = (time(b) - time(a)) as f64;
            let f = (t - time(a)) as f64 / span;
            let (a0, a1) = vals(a);
            let (b0, b1) = vals(b);
            return (a0 + (b0 - a0) * f, a1 + (b1 - a1) * f);
        }
    }
    vals(keys.last().unwrap())
}

fn path_at(keys: &[PathKey], t: usize) -> (f64, f64) {
    lerp_keys(keys, t, |k| k.t, |k| (k.x, k.y))
}

fn size_at(keys: &[SizeKey], t: usize) -> (f64, f64) {
    lerp_keys(keys, t, |k| k.t, |k| (k.w, k.h))
}

fn check_keys(what: &str, times: impl Iterator<Item = usize>) -> Result<()> {
    let times: Vec<usize> = times.collect();
    if times.is_empty() {
        return Err(Error::Config(format!("{what} has no keyframes")));
    }
    if times.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("{what} keyframes must have increasing t")));
    }
    Ok(())
}

/// Pixel coverage test for a shape centred at `(cx, cy)`.
fn covers(shape: Shape, cx: f64, cy: f64, w: f64, h: f64, px: usize, py: usize) -> bool {
    let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
    match shape {
        Shape::Rect => x >= cx - w / 2.0 && x < cx + w / 2.0 && y >= cy - h / 2.0 && y < cy + h / 2.0,
        Shape::Disk => {
            let r = w / 2.0;
            (x - cx).powi(2) + (y - cy).powi(2) <= r * r
        }
    }
}

/// Inclusive pixel range that can intersect `[lo, hi]`, clamped to `[0, n)`.
fn span(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let a = lo.floor().max(0.0);
    let b = hi.ceil().min(n as f64 - 1.0);
    if b < a || n == 0 {
        None
    } else {
        Some((a as usize, b as usize))
    }
}

impl ObjectSpec {
    pub fn is_visible_at(&self, t: usize) -> bool {
        self.visible.is_empty() || self.visible.iter().any(|&[a, b]| a <= t && t < b)
    }

    fn paint(&self, t: usize, offset: (f64, f64), width: usize, height: usize, mut f: impl FnMut(usize, usize)) {
        let (cx, cy) = path_at(&self.path, t);
        let (cx, cy) = (cx + offset.0, cy + offset.1);
        let (w, h) = size_at(&self.size, t);
        let h = if self.shape == Shape::Disk { w } else { h };
        if w <= 0.0 || h <= 0.0 {
            return;
        }
        let (Some((x0, x1)), Some((y0, y1))) =
            (span(cx - w / 2.0, cx + w / 2.0, width), span(cy - h / 2.0, cy + h / 2.0, height))
        else {
            return;
        };
        for py in y0..=y1 {
            for px in x0..=x1 {
                if covers(self.shape, cx, cy, w, h, px, py) {
                    f(px, py);
                }
            }
        }
    }
}

impl SceneSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SceneSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidDimensions {
                width: self.width,
                height: self.height,
                reason: "scene must be non-empty",
            });
        }
        if self.length == 0 {
            return Err(Error::Config("scene length must be positive".into()));
        }
        let unit = |what: String, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} {v} outside [0, 1]")))
            }
        };
        unit("background base".into(), self.background.base)?;
        unit("background texture".into(), self.background.texture)?;
        unit("background noise".into(), self.background.noise)?;
        let mut depths: Vec<usize> = self.objects.iter().map(|o| o.depth).collect();
        depths.sort_unstable();
        if depths.iter().enumerate().any(|(i, &d)| i != d) {
            return Err(Error::Config("object depths must be a permutation of 0..M".into()));
        }
        for (i, o) in self.objects.iter().enumerate() {
            let id = i + 1;
            unit(format!("object {id} gray"), o.gray)?;
            check_keys(&format!("object {id} path"), o.path.iter().map(|k| k.t))?;
            check_keys(&format!("object {id} size"), o.size.iter().map(|k| k.t))?;
            if o.size.iter().any(|k| !(k.w >= 0.0 && k.h >= 0.0)) {
                return Err(Error::Config(format!("object {id} has a negative size")));
            }
            for &[a, b] in &o.visible {
                if a >= b || b > self.length {
                    return Err(Error::Config(format!(
                        "object {id} visibility interval [{a}, {b}) outside [0, {})",
                        self.length
                    )));
                }
            }
        }
        for (i, d) in self.distractors.iter().enumerate() {
            if d.source >= self.objects.len() {
                return Err(Error::Config(format!("distractor {i} imitates missing object {}", d.source)));
            }
            check_keys(&format!("distractor {i} offset"), d.offset.iter().map(|k| k.t))?;
        }
        Ok(())
    }

    /// Frame `t`. Errors when `t` is past the end of the scene.
    pub fn render(&self, t: usize) -> Result<SynthFrame> {
        if t >= self.length {
            return Err(Error::FrameOutOfRange {
                index: t,
                len: self.length,
            });
        }
        let (w, h) = (self.width, self.height);
        let bg = self.background;
        let mut values: Vec<f64> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as u64, (i / w) as u64);
                let tex = seed::unit_hash(self.seed, x, y, 0) - 0.5;
                let noise = if bg.noise > 0.0 {
                    seed::unit_hash(self.seed, x, y, t as u64 + 1) - 0.5
                } else {
                    0.0
                };
                bg.base + bg.texture * tex + bg.noise * noise
            })
            .collect();
        for d in &self.distractors {
            let src = &self.objects[d.source];
            if !src.is_visible_at(t) {
                continue;
            }
            let off = path_at(&d.offset, t);
            src.paint(t, off, w, h, |x, y| values[y * w + x] = src.gray);
        }
        let mut labels = vec![0u32; w * h];
        let mut order: Vec<usize> = (0..self.objects.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(self.objects[i].depth));
        for i in order {
            let o = &self.objects[i];
            if !o.is_visible_at(t) {
                continue;
            }
            o.paint(t, (0.0, 0.0), w, h, |x, y| {
                values[y * w + x] = o.gray;
                labels[y * w + x] = i as u32 + 1;
            });
        }
        let m = self.objects.len();
        let mut visible = vec![false; m];
        for &l in &labels {
            if l > 0 {
                visible[l as usize - 1] = true;
            }
        }
        let pixels = values.into_iter().map(quantize).collect();
        Ok(SynthFrame {
            image: GrayImage::new(w, h, pixels)?,
            gt: LabelMap::from_labels(w, h, m as u32, labels)?,
            visible,
        })
    }

    /// Lazily renders every frame in order.
    pub fn frames(&self) -> impl Iterator<Item = Result<SynthFrame>> + '_ {
        (0..self.length).map(move |t| self.render(t))
    }

    pub fn generate(&self) -> Result<Vec<SynthFrame>> {
        self.validate()?;
        self.frames().collect()
    }
}

/// Scene files shipped with the crate.
pub const PRESETS: [(&str, &str); 5] = [
    ("occlusion", include_str!("../presets/occlusion.json")),
    ("reappear", include_str!("../presets/reappear.json")),
    ("distractor", include_str!("../presets/distractor.json")),
    ("tiny", include_str!("../presets/tiny.json")),
    ("long10k", include_str!("../presets/long10k.json")),
];

/// Looks up a bundled preset by name, with or without `.json`.
pub fn preset(name: &str) -> Result<SceneSpec> {
    let key = name.strip_suffix(".json").unwrap_or(name);
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == key)
        .ok_or_else(|| Error::parse("preset", format!("no preset or spec file named {name:?}")))?;
    SceneSpec::from_json(text)
}
