//! Binary and labeled masks with exact set and geometry operations.
//!
//! All grids are row-major: pixel `(x, y)` lives at index `y * width + x`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions {
            width,
            height,
            reason: "zero-size frame",
        });
    }
    Ok(())
}

/// Per-pixel occupancy of a single object.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Bitmask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl fmt::Debug for Bitmask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bitmask({}x{}, area={})", self.width, self.height, self.area())
    }
}

impl Bitmask {
    pub fn empty(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            bits: vec![false; width * height],
        })
    }

    pub fn full(width: usize, height: usize) -> Result<Self> {
        let mut m = Self::empty(width, height)?;
        m.bits.fill(true);
        Ok(m)
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height)?;
        if bits.len() != width * height {
            return Err(Error::Shape(format!(
                "{} bits for a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    /// Builds a mask with the listed `(x, y)` pixels set.
    pub fn from_pixels(width: usize, height: usize, pixels: &[(usize, usize)]) -> Result<Self> {
        let mut m = Self::empty(width, height)?;
        for &(x, y) in pixels {
            if x >= width || y >= height {
                return Err(Error::Shape(format!(
                    "pixel ({x},{y}) outside {width}x{height}"
                )));
            }
            m.set(x, y, true);
        }
        Ok(m)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_dims(&self, other: &Bitmask) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                left_w: self.width,
                left_h: self.height,
                right_w: other.width,
                right_h: other.height,
            });
        }
        Ok(())
    }

    /// Intersection over union. Two empty masks agree perfectly and score 1.
    pub fn iou(&self, other: &Bitmask) -> Result<f64> {
        self.same_dims(other)?;
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.bits.iter().zip(&other.bits) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            return Ok(1.0);
        }
        Ok(inter as f64 / union as f64)
    }

    pub fn intersection_area(&self, other: &Bitmask) -> Result<usize> {
        self.same_dims(other)?;
        Ok(self
            .bits
            .iter()
            .zip(&other.bits)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    /// Tightest inclusive box around the set pixels, `None` for an empty mask.
    pub fn enclosing_box(&self) -> Option<BBox> {
        let mut bbox: Option<BBox> = None;
        for y in 0..self.height {
            let row = &self.bits[y * self.width..(y + 1) * self.width];
            for (x, _) in row.iter().enumerate().filter(|(_, &b)| b) {
                bbox = Some(match bbox {
                    None => BBox {
                        x_min: x,
                        y_min: y,
                        x_max: x,
                        y_max: y,
                    },
                    Some(b) => BBox {
                        x_min: b.x_min.min(x),
                        y_min: b.y_min.min(y),
                        x_max: b.x_max.max(x),
                        y_max: b.y_max.max(y),
                    },
                });
            }
        }
        bbox
    }

    /// Nearest-neighbour resampling to `new_w x new_h`.
    pub fn resample(&self, new_w: usize, new_h: usize) -> Result<Bitmask> {
        check_dims(new_w, new_h)?;
        if new_w == self.width && new_h == self.height {
            return Ok(self.clone());
        }
        let mut out = Bitmask::empty(new_w, new_h)?;
        for y in 0..new_h {
            let sy = nearest_source(y, self.height, new_h);
            for x in 0..new_w {
                let sx = nearest_source(x, self.width, new_w);
                out.set(x, y, self.get(sx, sy));
            }
        }
        Ok(out)
    }

    /// Keeps only pixels inside `bbox`.
    pub fn clip_to(&self, bbox: &BBox) -> Bitmask {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !bbox.contains(x, y) {
                    out.set(x, y, false);
                }
            }
        }
        out
    }

    /// Square-element (Chebyshev radius `r`) dilation.
    pub fn dilate(&self, r: usize) -> Bitmask {
        self.morph(r, true)
    }

    /// Square-element (Chebyshev radius `r`) erosion. Pixels outside the frame count as background.
    pub fn erode(&self, r: usize) -> Bitmask {
        self.morph(r, false)
    }

    fn morph(&self, r: usize, dilate: bool) -> Bitmask {
        if r == 0 {
            return self.clone();
        }
        let (w, h) = (self.width as isize, self.height as isize);
        let r = r as isize;
        let mut out = self.clone();
        for y in 0..h {
            for x in 0..w {
                let mut hit = !dilate;
                'window: for dy in -r..=r {
                    for dx in -r..=r {
                        let (nx, ny) = (x + dx, y + dy);
                        let inside = nx >= 0 && ny >= 0 && nx < w && ny < h;
                        let v = inside && self.bits[(ny * w + nx) as usize];
                        if dilate && v {
                            hit = true;
                            break 'window;
                        }
                        if !dilate && !v {
                            hit = false;
                            break 'window;
                        }
                    }
                }
                out.bits[(y * w + x) as usize] = hit;
            }
        }
        out
    }

    pub fn to_rle(&self) -> RleMask {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u32;
        for &b in &self.bits {
            if b != current {
                runs.push(len);
                len = 0;
                current = b;
            }
            len += 1;
        }
        runs.push(len);
        RleMask {
            width: self.width,
            height: self.height,
            runs,
        }
    }
}

#[inline]
fn nearest_source(dst: usize, src_len: usize, dst_len: usize) -> usize {
    (((2 * dst + 1) * src_len) / (2 * dst_len)).min(src_len - 1)
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BBox {
    pub fn new(x_min: usize, y_min: usize, x_max: usize, y_max: usize) -> Result<Self> {
        if x_min > x_max || y_min > y_max {
            return Err(Error::Shape(format!(
                "inverted box ({x_min},{y_min})-({x_max},{y_max})"
            )));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x_max < width && self.y_max < height
    }
}

/// Per-pixel object ids; 0 is background, `1..=num_objects` are objects.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabelMap {
    width: usize,
    height: usize,
    num_objects: u32,
    labels: Vec<u32>,
}

impl LabelMap {
    pub fn background(width: usize, height: usize, num_objects: u32) -> Result<Self> {
        check_dims(width, height)?;
        Ok(Self {
            width,
            height,
            num_objects,
            labels: vec![0; width * height],
        })
    }

    pub fn from_labels(
        width: usize,
        height: usize,
        num_objects: u32,
        labels: Vec<u32>,
    ) -> Result<Self> {
        check_dims(width, height)?;
        if labels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} labels for a {width}x{height} map",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > num_objects) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                max: num_objects,
            });
        }
        Ok(Self {
            width,
            height,
            num_objects,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_objects(&self) -> u32 {
        self.num_objects
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// One mask per object id `1..=M`, in id order.
    pub fn split(&self) -> Vec<Bitmask> {
        let m = self.num_objects as usize;
        let mut masks: Vec<Vec<bool>> = vec![vec![false; self.labels.len()]; m];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                masks[l as usize - 1][i] = true;
            }
        }
        masks
            .into_iter()
            .map(|bits| Bitmask {
                width: self.width,
                height: self.height,
                bits,
            })
            .collect()
    }

    /// Inverse of [`split`](Self::split). Overlapping pixels go to the highest object index.
    pub fn merge(masks: &[Bitmask]) -> Result<LabelMap> {
        let first = masks.first().ok_or(Error::Empty("merge needs at least one mask"))?;
        for m in &masks[1..] {
            first.same_dims(m)?;
        }
        let mut labels = vec![0u32; first.width * first.height];
        for (id, m) in masks.iter().enumerate() {
            for (slot, &b) in labels.iter_mut().zip(&m.bits) {
                if b {
                    *slot = id as u32 + 1;
                }
            }
        }
        Ok(LabelMap {
            width: first.width,
            height: first.height,
            num_objects: masks.len() as u32,
            labels,
        })
    }

    /// Nearest-neighbour resampling, used to bring annotations down to feature scales.
    pub fn resample(&self, new_w: usize, new_h: usize) -> Result<LabelMap> {
        check_dims(new_w, new_h)?;
        let mut labels = Vec::with_capacity(new_w * new_h);
        for y in 0..new_h {
            let sy = nearest_source(y, self.height, new_h);
            for x in 0..new_w {
                let sx = nearest_source(x, self.width, new_w);
                labels.push(self.get(sx, sy));
            }
        }
        Ok(LabelMap {
            width: new_w,
            height: new_h,
            num_objects: self.num_objects,
            labels,
        })
    }

    /// Relabels object `i` as `perm[i - 1]`; background stays 0.
    pub fn permute(&self, perm: &[u32]) -> Result<LabelMap> {
        if perm.len() != self.num_objects as usize {
            return Err(Error::Shape(format!(
                "permutation of length {} for {} objects",
                perm.len(),
                self.num_objects
            )));
        }
        let labels = self
            .labels
            .iter()
            .map(|&l| if l == 0 { 0 } else { perm[l as usize - 1] })
            .collect();
        LabelMap::from_labels(self.width, self.height, self.num_objects, labels)
    }
}

/// Run-length encoded mask: alternating background/foreground runs, background first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RleMask {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<u32>,
}

impl RleMask {
    pub fn decode(&self) -> Result<Bitmask> {
        check_dims(self.width, self.height)?;
        let expected = (self.width * self.height) as u64;
        let got: u64 = self.runs.iter().map(|&r| r as u64).sum();
        if got != expected {
            return Err(Error::RleLength { got, expected });
        }
        let mut bits = Vec::with_capacity(expected as usize);
        let mut value = false;
        for &r in &self.runs {
            bits.extend(std::iter::repeat_n(value, r as usize));
            value = !value;
        }
        Ok(Bitmask {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    /// Foreground pixel count without decoding.
    pub fn area(&self) -> u64 {
        self.runs.iter().skip(1).step_by(2).map(|&r| r as u64).sum()
    }
}

impl fmt::Display for RleMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.width, self.height)?;
        for r in &self.runs {
            write!(f, " {r}")?;
        }
        Ok(())
    }
}

impl FromStr for RleMask {
    type Err = Error;

    /// Parses the `w h r0 r1 ...` text line.
    fn from_str(line: &str) -> Result<Self> {
        let mut fields = line.split_ascii_whitespace().map(|tok| {
            tok.parse::<u64>()
                .map_err(|e| Error::parse("rle line", format!("{tok:?}: {e}")))
        });
        let width = fields
            .next()
            .ok_or_else(|| Error::parse("rle line", "missing width"))??;
        let height = fields
            .next()
            .ok_or_else(|| Error::parse("rle line", "missing height"))??;
        let runs = fields
            .map(|r| {
                r.and_then(|v| {
                    u32::try_from(v).map_err(|_| Error::parse("rle line", "run too long"))
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        if runs.is_empty() {
            return Err(Error::parse("rle line", "no runs"));
        }
        let rle = RleMask {
            width: width as usize,
            height: height as usize,
            runs,
        };
        check_dims(rle.width, rle.height)?;
        let got: u64 = rle.runs.iter().map(|&r| r as u64).sum();
        if got != width * height {
            return Err(Error::RleLength {
                got,
                expected: width * height,
            });
        }
        Ok(rle)
    }
}
