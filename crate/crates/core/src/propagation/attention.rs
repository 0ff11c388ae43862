//! Single-head scaled dot-product attention.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-stochastic weights `softmax(q kᵀ / sqrt(C))`, shape `[N, T]`.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let c = q.channels();
    if k.channels() != c {
        return Err(Error::Shape(format!(
            "query channels {c} vs key channels {}",
            k.channels()
        )));
    }
    let (n, t) = (q.rows(), k.rows());
    if t == 0 {
        return Err(Error::Empty("attention memory"));
    }
    let scale = 1.0 / (c as f64).sqrt();
    let mut w = vec![0.0; n * t];
    for (i, row) in w.chunks_mut(t).enumerate() {
        let qi = q.row(i);
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>() * scale;
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(vec![n, t], w)
}

/// `weights[N, T] · v[T, C']`.
pub fn attend(weights: &Tensor, v: &Tensor) -> Result<Tensor> {
    if weights.channels() != v.rows() {
        return Err(Error::Shape(format!(
            "weights {:?} vs values {:?}",
            weights.shape(),
            v.shape()
        )));
    }
    let v = v.clone().reshape(vec![v.rows(), v.channels()])?;
    weights.matmul(&v)
}

pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    attend(&attention_weights(q, k)?, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_returns_value() {
        let q = Tensor::new(vec![2, 2], vec![5.0, -3.0, 0.1, 0.2]).unwrap();
        let k = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let v = Tensor::new(vec![1, 3], vec![1.5, -2.0, 7.0]).unwrap();
        let out = attention(&q, &k, &v).unwrap();
        assert_eq!(out.values(), &[1.5, -2.0, 7.0, 1.5, -2.0, 7.0]);
    }

    #[test]
    fn two_key_hand_case() {
        let q = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let k = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let v = Tensor::new(vec![2, 1], vec![2.0, 4.0]).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let w1 = s.exp() / (s.exp() + 1.0);
        let expected = w1 * 2.0 + (1.0 - w1) * 4.0;
        let out = attention(&q, &k, &v).unwrap();
        assert!((out.values()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn joint_row_permutation_invariant() {
        let q = Tensor::from_fn(vec![3, 4], |i| (i as f64 * 0.37).sin());
        let k = Tensor::from_fn(vec![5, 4], |i| (i as f64 * 0.11).cos());
        let v = Tensor::from_fn(vec![5, 2], |i| i as f64);
        let perm = [3, 0, 4, 1, 2];
        let pk: Vec<f64> = perm.iter().flat_map(|&r| k.row(r).to_vec()).collect();
        let pv: Vec<f64> = perm.iter().flat_map(|&r| v.row(r).to_vec()).collect();
        let a = attention(&q, &k, &v).unwrap();
        let b = attention(
            &q,
            &Tensor::new(vec![5, 4], pk).unwrap(),
            &Tensor::new(vec![5, 2], pv).unwrap(),
        )
        .unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn empty_memory_rejected() {
        let q = Tensor::zeros(vec![1, 2]);
        let k = Tensor::zeros(vec![0, 2]);
        assert!(matches!(attention_weights(&q, &k), Err(Error::Empty(_))));
        assert!(attention_weights(&q, &Tensor::zeros(vec![1, 3])).is_err());
    }

    #[test]
    fn huge_logits_stay_finite() {
        let q = Tensor::new(vec![1, 1], vec![1e6]).unwrap();
        let k = Tensor::new(vec![2, 1], vec![1e6, -1e6]).unwrap();
        let w = attention_weights(&q, &k).unwrap();
        assert_eq!(w.values(), &[1.0, 0.0]);
    }
}
