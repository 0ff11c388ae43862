//! Per-object identity vectors that let all objects propagate in one pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::mask::LabelMap;
use crate::tensor::Tensor;

const BANK_STREAM: u64 = 0x1d_ba4c_0000_0001;

/// `M + 1` identity vectors; row 0 is background.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityBank {
    vectors: Tensor,
}

impl IdentityBank {
    /// i.i.d. unit-normal vectors drawn from `seed`.
    pub fn seeded(num_objects: u32, id_channels: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ BANK_STREAM);
        let vectors = Tensor::from_fn(vec![num_objects as usize + 1, id_channels], |_| {
            StandardNormal.sample(&mut rng)
        });
        Self { vectors }
    }

    pub fn from_vectors(vectors: Tensor) -> Result<Self> {
        if vectors.shape().len() != 2 || vectors.shape()[0] < 1 {
            return Err(Error::Shape(format!(
                "identity bank must be [M+1, C], got {:?}",
                vectors.shape()
            )));
        }
        let n = vectors.shape()[0];
        for i in 0..n {
            for j in i + 1..n {
                if vectors.row(i) == vectors.row(j) {
                    return Err(Error::Shape(format!("identity vectors {i} and {j} coincide")));
                }
            }
        }
        Ok(Self { vectors })
    }

    pub fn num_objects(&self) -> u32 {
        self.vectors.shape()[0] as u32 - 1
    }

    pub fn channels(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn vector(&self, label: u32) -> &[f64] {
        self.vectors.row(label as usize)
    }

    /// Bank whose row `perm[i - 1]` holds this bank's row `i`; background stays put.
    ///
    /// Pairs with [`LabelMap::permute`] to relabel a sequence without changing its embedding.
    pub fn permuted(&self, perm: &[u32]) -> Result<Self> {
        let m = self.num_objects() as usize;
        let mut seen = vec![false; m + 1];
        for &p in perm {
            if p == 0 || p as usize > m || std::mem::replace(&mut seen[p as usize], true) {
                return Err(Error::Shape(format!("{perm:?} is not a permutation of 1..={m}")));
            }
        }
        if perm.len() != m {
            return Err(Error::Shape(format!("{perm:?} is not a permutation of 1..={m}")));
        }
        let c = self.channels();
        let mut values = self.vectors.values().to_vec();
        for (i, &p) in perm.iter().enumerate() {
            let src = self.vectors.row(i + 1);
            values[p as usize * c..(p as usize + 1) * c].copy_from_slice(src);
        }
        Ok(Self {
            vectors: Tensor::new(vec![m + 1, c], values)?,
        })
    }
}

/// Paints every pixel of `labels` with its object's identity vector: `[h, w, c_id]`.
pub fn embed_identities(labels: &LabelMap, bank: &IdentityBank) -> Result<Tensor> {
    let c = bank.channels();
    let mut values = Vec::with_capacity(labels.labels().len() * c);
    for &l in labels.labels() {
        if l > bank.num_objects() {
            return Err(Error::LabelOutOfRange {
                label: l,
                max: bank.num_objects(),
            });
        }
        values.extend_from_slice(bank.vector(l));
    }
    Tensor::new(vec![labels.height(), labels.width(), c], values)
}
