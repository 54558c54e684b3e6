//! Embedding losses with analytic gradients: the cluster-separation loss with
//! angular margins, plus triplet, quintuplet-ordering, and softmax
//! cross-entropy baselines. All gradients are taken with respect to the raw
//! (pre-aggregation) batch embeddings so training can backpropagate through
//! the encoder.

mod clmle;
mod lmle;
mod softmax;
mod triplet;

pub use clmle::clmle_loss;
pub use lmle::{lmle_loss, sample_quintuplet, sample_quintuplets, validate_quintuplet, LmleMargins};
pub use softmax::{softmax_ce_loss, SoftmaxLoss};
pub use triplet::{triplet_loss, Triplet};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Batch embeddings keyed by sample id. Values are raw vectors: unit-norm in
/// training, but the losses are well-defined off the sphere so finite
/// differences can probe them.
pub type Embeddings = BTreeMap<usize, Vec<f64>>;

/// Scalar loss plus gradients with respect to each batch embedding.
#[derive(Debug, Clone)]
pub struct LossOutput {
    /// Loss value in nats.
    pub value: f64,
    /// Gradient of the loss with respect to each sample's embedding.
    pub grads: BTreeMap<usize, Vec<f64>>,
    /// Unweighted per-sample loss terms, used to score cluster hardness.
    pub per_sample: BTreeMap<usize, f64>,
}

impl LossOutput {
    fn zeroed(embeddings: &Embeddings) -> Self {
        Self {
            value: 0.0,
            grads: embeddings
                .iter()
                .map(|(&id, v)| (id, vec![0.0; v.len()]))
                .collect(),
            per_sample: embeddings.keys().map(|&id| (id, 0.0)).collect(),
        }
    }
}

/// One cluster of a mini-batch: its global id, class label, and the sampled
/// member ids present in the batch.
#[derive(Debug, Clone)]
pub struct BatchCluster {
    pub cluster_id: usize,
    pub class: usize,
    pub members: Vec<usize>,
}

/// Configuration for the cluster-separation loss: between-class margin `a1`,
/// within-class margin `a2`, and per-sample cost weights (missing ids weigh 1).
#[derive(Debug, Clone)]
pub struct ClmleConfig {
    a1: f64,
    a2: f64,
    cost_weights: BTreeMap<usize, f64>,
}

impl ClmleConfig {
    /// Requires `0 <= a2 <= a1 <= 2`: the between-class margin dominates the
    /// within-class one, and neither exceeds the cosine-difference range.
    pub fn new(a1: f64, a2: f64) -> Result<Self> {
        if !(0.0..=2.0).contains(&a1) || !(0.0..=a1).contains(&a2) {
            return Err(Error::ConfigError(format!(
                "margins must satisfy 0 <= a2 <= a1 <= 2, got a1={a1}, a2={a2}"
            )));
        }
        Ok(Self {
            a1,
            a2,
            cost_weights: BTreeMap::new(),
        })
    }

    /// Attaches strictly positive cost weights.
    pub fn with_weights(mut self, weights: BTreeMap<usize, f64>) -> Result<Self> {
        for (&sample, &weight) in &weights {
            if !(weight > 0.0) {
                return Err(Error::NonPositiveWeight { sample, weight });
            }
        }
        self.cost_weights = weights;
        Ok(self)
    }

    pub fn a1(&self) -> f64 {
        self.a1
    }

    pub fn a2(&self) -> f64 {
        self.a2
    }

    pub(crate) fn weight_of(&self, sample: usize) -> f64 {
        self.cost_weights.get(&sample).copied().unwrap_or(1.0)
    }
}

/// Log of the sum of exponentials, computed with the max subtracted.
pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values
        .clone()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

pub(crate) fn embedding_dim(embeddings: &Embeddings) -> Result<usize> {
    let mut dims = embeddings.values().map(Vec::len);
    let first = dims.next().ok_or(Error::EmptyInput)?;
    if let Some(other) = dims.find(|&d| d != first) {
        return Err(Error::DimensionMismatch {
            left: first,
            right: other,
        });
    }
    Ok(first)
}

pub(crate) fn lookup<'a>(embeddings: &'a Embeddings, id: usize) -> Result<&'a [f64]> {
    embeddings
        .get(&id)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::ShapeMismatch(format!("sample {id} missing from batch embeddings")))
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::Embeddings;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Central finite differences of a scalar function of the embeddings.
    pub fn finite_difference_grads<F>(
        f: F,
        embeddings: &Embeddings,
        step: f64,
    ) -> std::collections::BTreeMap<usize, Vec<f64>>
    where
        F: Fn(&Embeddings) -> f64,
    {
        let mut grads = std::collections::BTreeMap::new();
        for (&id, v) in embeddings {
            let mut g = vec![0.0; v.len()];
            for (j, slot) in g.iter_mut().enumerate() {
                let mut plus = embeddings.clone();
                plus.get_mut(&id).unwrap()[j] += step;
                let mut minus = embeddings.clone();
                minus.get_mut(&id).unwrap()[j] -= step;
                *slot = (f(&plus) - f(&minus)) / (2.0 * step);
            }
            grads.insert(id, g);
        }
        grads
    }

    /// Relative error between two gradient maps, as norm of the difference
    /// over the summed norms.
    pub fn grad_relative_error(
        a: &std::collections::BTreeMap<usize, Vec<f64>>,
        b: &std::collections::BTreeMap<usize, Vec<f64>>,
    ) -> f64 {
        let mut diff = 0.0;
        let mut scale = 0.0;
        for (id, ga) in a {
            let gb = &b[id];
            for (x, y) in ga.iter().zip(gb) {
                diff += (x - y) * (x - y);
                scale += x * x + y * y;
            }
        }
        (diff.sqrt()) / scale.sqrt().max(1e-12)
    }

    pub fn random_unit_embeddings(ids: &[usize], dim: usize, seed: u64) -> Embeddings {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ids.iter()
            .map(|&id| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
                (id, v.into_iter().map(|x| x / norm).collect())
            })
            .collect()
    }
}
