use serde::{Deserialize, Serialize};

use super::masks::MaskMatrix;
use crate::error::{Error, Result};

/// Finite stand-in for the infinite Shapley kernel weight of the full
/// coalition.
pub const W_MAX: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWeights(Vec<f64>);

impl KernelWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some((j, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::invalid(format!(
                "weight {j} is {w}; weights must be positive and finite"
            )));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Cosine similarity between a row with `ones` present tokens and the full
/// row of width `l`.
pub fn cosine_to_full(ones: usize, l: usize) -> f64 {
    (ones as f64 / l as f64).sqrt()
}

/// LIME proximity: cosine similarity of each row to the original input.
pub fn lime_weights(masks: &MaskMatrix) -> KernelWeights {
    let l = masks.width();
    KernelWeights(
        (0..masks.len())
            .map(|j| cosine_to_full(masks.ones(j), l))
            .collect(),
    )
}

pub fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (1..=k).fold(1.0, |acc, i| acc * (n - k + i) as f64 / i as f64)
}

/// `(l - 1) / (C(l, s) * s * (l - s))`, or [`W_MAX`] for the full coalition.
pub fn shapley_kernel(l: usize, s: usize) -> f64 {
    if s >= l {
        W_MAX
    } else {
        (l - 1) as f64 / (binomial(l, s) * (s * (l - s)) as f64)
    }
}

pub fn shapley_kernel_weights(masks: &MaskMatrix) -> KernelWeights {
    let l = masks.width();
    KernelWeights(
        (0..masks.len())
            .map(|j| shapley_kernel(l, masks.ones(j)))
            .collect(),
    )
}

/// Shapley kernel divided by the probability of drawing the row under the
/// uniform-size mask law (`1 / (l * C(l, s))`), so that sampled rows
/// estimate the full-enumeration objective. The full coalition keeps
/// [`W_MAX`].
pub fn shapley_sampling_weights(masks: &MaskMatrix) -> KernelWeights {
    let l = masks.width();
    KernelWeights(
        (0..masks.len())
            .map(|j| {
                let s = masks.ones(j);
                if s >= l {
                    W_MAX
                } else {
                    ((l - 1) * l) as f64 / (s * (l - s)) as f64
                }
            })
            .collect(),
    )
}
