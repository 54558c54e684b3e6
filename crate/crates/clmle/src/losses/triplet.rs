//! Plain triplet hinge loss on squared Euclidean distances.

use crate::error::{Error, Result};
use crate::hypersphere::squared_distance;

use super::{lookup, Embeddings, LossOutput};

/// An (anchor, positive, negative) triple of sample ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Mean hinge `[D(a,p) - D(a,n) + g]_+` over the triplets, with exact
/// subgradients (zero at the hinge boundary).
pub fn triplet_loss(
    embeddings: &Embeddings,
    triplets: &[Triplet],
    margin: f64,
) -> Result<LossOutput> {
    if triplets.is_empty() {
        return Err(Error::EmptyTripletSet);
    }
    if !(margin > 0.0) {
        return Err(Error::ConfigError(format!(
            "triplet margin must be positive, got {margin}"
        )));
    }
    let mut out = LossOutput::zeroed(embeddings);
    let scale = 1.0 / triplets.len() as f64;
    let mut anchor_counts: std::collections::BTreeMap<usize, usize> = Default::default();
    for t in triplets {
        let a = lookup(embeddings, t.anchor)?;
        let p = lookup(embeddings, t.positive)?;
        let n = lookup(embeddings, t.negative)?;
        let hinge = squared_distance(a, p) - squared_distance(a, n) + margin;
        *anchor_counts.entry(t.anchor).or_insert(0) += 1;
        if hinge > 0.0 {
            out.value += scale * hinge;
            *out.per_sample.get_mut(&t.anchor).unwrap() += hinge;
            let ga = out.grads.get_mut(&t.anchor).unwrap();
            for j in 0..a.len() {
                ga[j] += scale * 2.0 * (n[j] - p[j]);
            }
            let gp = out.grads.get_mut(&t.positive).unwrap();
            for j in 0..a.len() {
                gp[j] += scale * -2.0 * (a[j] - p[j]);
            }
            let gn = out.grads.get_mut(&t.negative).unwrap();
            for j in 0..a.len() {
                gn[j] += scale * 2.0 * (a[j] - n[j]);
            }
        }
    }
    // Cache signal: mean hinge per anchor.
    for (anchor, count) in anchor_counts {
        *out.per_sample.get_mut(&anchor).unwrap() /= count as f64;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn embeddings(entries: &[(usize, Vec<f64>)]) -> Embeddings {
        entries.iter().cloned().collect()
    }

    #[test]
    fn satisfied_margin_gives_zero() {
        let e = embeddings(&[
            (0, vec![1.0, 0.0]),
            (1, vec![1.0, 0.0]),
            (2, vec![-1.0, 0.0]),
        ]);
        let t = [Triplet { anchor: 0, positive: 1, negative: 2 }];
        let out = triplet_loss(&e, &t, 0.1).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grads.values().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn maximally_violated_triplet() {
        let e = embeddings(&[
            (0, vec![1.0, 0.0]),
            (1, vec![-1.0, 0.0]),
            (2, vec![1.0, 0.0]),
        ]);
        let t = [Triplet { anchor: 0, positive: 1, negative: 2 }];
        let out = triplet_loss(&e, &t, 0.1).unwrap();
        assert_abs_diff_eq!(out.value, 4.1, epsilon = 1e-12);
    }

    #[test]
    fn empty_set_rejected() {
        let e = embeddings(&[(0, vec![1.0, 0.0])]);
        assert!(matches!(
            triplet_loss(&e, &[], 0.1),
            Err(Error::EmptyTripletSet)
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let ids: Vec<usize> = (0..6).collect();
        let e = random_unit_embeddings(&ids, 5, 91);
        let triplets = [
            Triplet { anchor: 0, positive: 1, negative: 3 },
            Triplet { anchor: 2, positive: 4, negative: 5 },
            Triplet { anchor: 1, positive: 0, negative: 4 },
        ];
        let out = triplet_loss(&e, &triplets, 0.2).unwrap();
        let fd = finite_difference_grads(
            |emb| triplet_loss(emb, &triplets, 0.2).unwrap().value,
            &e,
            1e-5,
        );
        let err = grad_relative_error(&out.grads, &fd);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn grads_cover_every_batch_sample() {
        let e = embeddings(&[
            (0, vec![1.0, 0.0]),
            (1, vec![0.0, 1.0]),
            (2, vec![-1.0, 0.0]),
            (7, vec![0.0, -1.0]),
        ]);
        let t = [Triplet { anchor: 0, positive: 1, negative: 2 }];
        let out = triplet_loss(&e, &t, 0.5).unwrap();
        let keys: Vec<usize> = out.grads.keys().copied().collect();
        assert_eq!(keys, vec![0, 1, 2, 7]);
        assert!(out.grads[&7].iter().all(|&g| g == 0.0));
        let _: &BTreeMap<usize, f64> = &out.per_sample;
    }
}
