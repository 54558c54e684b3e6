//! Softmax cross-entropy over linear class scores, the non-metric baseline.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::{embedding_dim, log_sum_exp, Embeddings, LossOutput};

/// Cross-entropy output: per-embedding gradients plus the gradient with
/// respect to the class weight matrix.
#[derive(Debug, Clone)]
pub struct SoftmaxLoss {
    pub output: LossOutput,
    /// Same shape as the weight matrix: `d` rows, one column per class.
    pub weight_grads: Vec<Vec<f64>>,
}

/// Mean cross-entropy of scores `W^T f(x)` against the labels.
///
/// `weights` has `d` rows and one column per class.
pub fn softmax_ce_loss(
    embeddings: &Embeddings,
    labels: &BTreeMap<usize, usize>,
    weights: &[Vec<f64>],
) -> Result<SoftmaxLoss> {
    let dim = embedding_dim(embeddings)?;
    if weights.len() != dim {
        return Err(Error::ShapeMismatch(format!(
            "weight matrix has {} rows, embeddings have dimension {dim}",
            weights.len()
        )));
    }
    let classes = weights.first().map(Vec::len).unwrap_or(0);
    if classes == 0 || weights.iter().any(|row| row.len() != classes) {
        return Err(Error::ShapeMismatch(
            "weight matrix rows must share one column count".into(),
        ));
    }

    let mut out = LossOutput::zeroed(embeddings);
    let mut weight_grads = vec![vec![0.0; classes]; dim];
    let batch = embeddings.len() as f64;

    for (&id, f) in embeddings {
        let &label = labels.get(&id).ok_or(Error::ShapeMismatch(format!(
            "sample {id} missing from labels"
        )))?;
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        let scores: Vec<f64> = (0..classes)
            .map(|c| f.iter().zip(weights).map(|(x, row)| x * row[c]).sum())
            .collect();
        let lse = log_sum_exp(scores.iter().copied());
        let ce = lse - scores[label];
        out.value += ce / batch;
        *out.per_sample.get_mut(&id).unwrap() = ce;

        // softmax(scores) - onehot(label), stabilized.
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
        let g = out.grads.get_mut(&id).unwrap();
        for c in 0..classes {
            let mut p = (scores[c] - max).exp() / denom;
            if c == label {
                p -= 1.0;
            }
            let p = p / batch;
            for j in 0..dim {
                g[j] += p * weights[j][c];
                weight_grads[j][c] += p * f[j];
            }
        }
    }

    Ok(SoftmaxLoss {
        output: out,
        weight_grads,
    })
}
