//! Dense row-major `f64` tensors.
//!
//! Feature maps use shape `[height, width, channels]`; most kernels treat any
//! tensor as a matrix of `rows x channels` where `channels` is the last dim.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Shape(format!("non-finite tensor value {bad}")));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            values: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Size of the last dimension.
    pub fn channels(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Number of rows when viewed as `rows x channels`.
    pub fn rows(&self) -> usize {
        self.values.len().checked_div(self.channels()).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.channels();
        &self.values[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.values.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// `self[rows x k] * rhs[k x n]`, keeping the leading dims of `self`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if rhs.shape.len() != 2 || rhs.shape[0] != self.channels() {
            return Err(Error::Shape(format!(
                "matmul {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let (k, n) = (rhs.shape[0], rhs.shape[1]);
        let rows = self.rows();
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let a = &self.values[r * k..(r + 1) * k];
            let o = &mut out[r * n..(r + 1) * n];
            for (kk, &av) in a.iter().enumerate() {
                if av == 0.0 {
                    continue;
                }
                let b = &rhs.values[kk * n..(kk + 1) * n];
                for (ov, &bv) in o.iter_mut().zip(b) {
                    *ov += av * bv;
                }
            }
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = n;
        Ok(Tensor { shape, values: out })
    }

    /// Adds a per-channel bias vector.
    pub fn add_bias(&mut self, bias: &Tensor) -> Result<()> {
        let c = self.channels();
        if bias.values.len() != c {
            return Err(Error::Shape(format!(
                "bias {:?} for {:?}",
                bias.shape, self.shape
            )));
        }
        for row in self.values.chunks_mut(c) {
            for (v, b) in row.iter_mut().zip(&bias.values) {
                *v += b;
            }
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_with(rhs, |a, b| a * b)
    }

    fn zip_with(&self, rhs: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(Error::Shape(format!(
                "elementwise {:?} vs {:?}",
                self.shape, rhs.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            values: self
                .values
                .iter()
                .zip(&rhs.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn map(mut self, f: impl Fn(f64) -> f64) -> Tensor {
        self.values.iter_mut().for_each(|v| *v = f(*v));
        self
    }

    /// Concatenates along the last axis. Leading dims must agree.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("concat of no tensors"))?;
        let lead = &first.shape[..first.shape.len() - 1];
        for p in parts {
            if &p.shape[..p.shape.len() - 1] != lead {
                return Err(Error::Shape(format!(
                    "concat {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
        }
        let rows = first.rows();
        let total: usize = parts.iter().map(|p| p.channels()).sum();
        let mut values = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                values.extend_from_slice(p.row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Ok(Tensor { shape, values })
    }

    /// Stacks the rows of several tensors into one `[sum_rows, channels]` matrix.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::Empty("concat of no tensors"))?;
        let c = first.channels();
        let mut values = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.channels() != c {
                return Err(Error::Shape(format!(
                    "row concat {:?} with {:?}",
                    first.shape, p.shape
                )));
            }
            rows += p.rows();
            values.extend_from_slice(&p.values);
        }
        Ok(Tensor {
            shape: vec![rows, c],
            values,
        })
    }

    /// Bilinear resize of an `[h, w, c]` map (half-pixel centers, edge clamped).
    pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> Result<Tensor> {
        let (h, w, c) = self.hwc()?;
        if (h, w) == (new_h, new_w) {
            return Ok(self.clone());
        }
        let axis = |dst: usize, src_len: usize, dst_len: usize| {
            let pos = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5)
                .clamp(0.0, (src_len - 1) as f64);
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, pos - lo as f64)
        };
        let mut values = vec![0.0; new_h * new_w * c];
        for y in 0..new_h {
            let (y0, y1, fy) = axis(y, h, new_h);
            for x in 0..new_w {
                let (x0, x1, fx) = axis(x, w, new_w);
                let out = &mut values[(y * new_w + x) * c..(y * new_w + x + 1) * c];
                let taps = [
                    ((y0, x0), (1.0 - fy) * (1.0 - fx)),
                    ((y0, x1), (1.0 - fy) * fx),
                    ((y1, x0), fy * (1.0 - fx)),
                    ((y1, x1), fy * fx),
                ];
                for ((ty, tx), wt) in taps {
                    if wt == 0.0 {
                        continue;
                    }
                    let src = &self.values[(ty * w + tx) * c..(ty * w + tx + 1) * c];
                    for (o, &s) in out.iter_mut().zip(src) {
                        *o += wt * s;
                    }
                }
            }
        }
        Ok(Tensor {
            shape: vec![new_h, new_w, c],
            values,
        })
    }

    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [h, w, c] => Ok((h, w, c)),
            _ => Err(Error::Shape(format!(
                "expected [h, w, c], got {:?}",
                self.shape
            ))),
        }
    }

    /// Normalises every row to zero mean and unit variance (no affine terms).
    pub fn layer_norm(&self) -> Tensor {
        let c = self.channels();
        let mut values = self.values.clone();
        for row in values.chunks_mut(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        }
        Tensor {
            shape: self.shape.clone(),
            values,
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![5.0, 6.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().values(), &[17.0, 39.0]);
        assert!(b.matmul(&b).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(Tensor::new(vec![1], vec![f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![1.0]).is_err());
    }

    #[test]
    fn bilinear_constant_and_identity() {
        let t = Tensor::from_fn(vec![2, 3, 2], |_| 0.25);
        let up = t.resize_bilinear(7, 5).unwrap();
        assert!(up.values().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let r = Tensor::from_fn(vec![3, 3, 1], |i| i as f64);
        assert_eq!(r.resize_bilinear(3, 3).unwrap(), r);
    }

    #[test]
    fn bilinear_upsample_2x_interior() {
        // 1 x 2 row [0, 1] upsampled to 1 x 4: centers map to -0.25, 0.25, 0.75, 1.25
        let t = Tensor::new(vec![1, 2, 1], vec![0.0, 1.0]).unwrap();
        let up = t.resize_bilinear(1, 4).unwrap();
        assert_eq!(up.values(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn layer_norm_rows() {
        let t = Tensor::new(vec![2, 2], vec![1.0, 3.0, 5.0, 5.0]).unwrap();
        let n = t.layer_norm();
        let s = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert_eq!(n.values(), &[-s, s, 0.0, 0.0]);
    }

    #[test]
    fn sigmoid_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-1000.0) < 1e-300);
        assert_eq!(sigmoid(1000.0), 1.0);
    }

    #[test]
    fn concat_shapes() {
        let a = Tensor::zeros(vec![2, 2, 3]);
        let b = Tensor::zeros(vec![2, 2, 1]);
        assert_eq!(Tensor::concat_channels(&[&a, &b]).unwrap().shape(), &[2, 2, 4]);
        let r = Tensor::concat_rows(&[&a, &a]).unwrap();
        assert_eq!(r.shape(), &[8, 3]);
        assert!(Tensor::concat_rows(&[&a, &b]).is_err());
    }
}
