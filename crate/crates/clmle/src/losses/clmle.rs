//! Cluster-separation loss with angular margins.
//!
//! For every batch member the loss penalizes, in hinged log-ratio form, the
//! probability its embedding assigns to competing cluster centroids: one term
//! against different-class clusters (margin `a1`) and one against same-class
//! clusters (margin `a2`). Batch centroids are the normalized means of the
//! sampled members and are differentiated through, so gradients reach every
//! member embedding both directly and via the centroids it shapes.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::hypersphere::{dot, l2_norm, ZERO_NORM_TOL};

use super::{embedding_dim, log_sum_exp, lookup, BatchCluster, ClmleConfig, Embeddings, LossOutput};

/// Evaluates the cluster-separation loss over `M >= 2` batch clusters.
///
/// With `s(i,k)` the similarity of member `i` to batch centroid `k`, the
/// per-member term is
/// `[lse_{k: other class} s(i,k) - (s(i,m) - a1)]_+ +
///  [lse_{k != m, same class} s(i,k) - (s(i,m) - a2)]_+`,
/// weighted by the member's cost weight; the total is normalized by the
/// batch member count. A term whose competitor set is empty contributes
/// nothing, as does a hinge that is exactly at or below zero.
pub fn clmle_loss(
    embeddings: &Embeddings,
    clusters: &[BatchCluster],
    config: &ClmleConfig,
) -> Result<LossOutput> {
    if clusters.len() < 2 {
        return Err(Error::SingleClusterBatch(clusters.len()));
    }
    let dim = embedding_dim(embeddings)?;
    let m_count = clusters.len();

    let mut seen: BTreeMap<usize, ()> = BTreeMap::new();
    let mut total_members = 0usize;
    for cluster in clusters {
        if cluster.members.is_empty() {
            return Err(Error::EmptyInput);
        }
        for &id in &cluster.members {
            if seen.insert(id, ()).is_some() {
                return Err(Error::ConfigError(format!(
                    "sample {id} appears in more than one batch cluster"
                )));
            }
            let w = config.weight_of(id);
            if !(w > 0.0) {
                return Err(Error::NonPositiveWeight { sample: id, weight: w });
            }
            total_members += 1;
        }
    }

    // Batch centroids: normalized member sums, kept as (sum, norm, unit).
    let mut sums = Vec::with_capacity(m_count);
    let mut norms = Vec::with_capacity(m_count);
    let mut centroids = Vec::with_capacity(m_count);
    for cluster in clusters {
        let mut sum = vec![0.0; dim];
        for &id in &cluster.members {
            let f = lookup(embeddings, id)?;
            for (s, x) in sum.iter_mut().zip(f) {
                *s += x;
            }
        }
        let norm = l2_norm(&sum);
        if norm < ZERO_NORM_TOL {
            return Err(Error::DegenerateCentroid { norm });
        }
        let unit: Vec<f64> = sum.iter().map(|s| s / norm).collect();
        sums.push(sum);
        norms.push(norm);
        centroids.push(unit);
    }

    let members: Vec<(usize, usize)> = clusters
        .iter()
        .enumerate()
        .flat_map(|(m, c)| c.members.iter().map(move |&id| (m, id)))
        .collect();

    let scale = 1.0 / total_members as f64;
    let mut out = LossOutput::zeroed(embeddings);
    // d(loss)/d(s[i][k]) for each member row, dense over the M centroids.
    let mut sim_grads: Vec<Vec<f64>> = vec![vec![0.0; m_count]; members.len()];

    for (row, &(m, id)) in members.iter().enumerate() {
        let f = lookup(embeddings, id)?;
        let sims: Vec<f64> = centroids.iter().map(|c| dot(f, c)).collect();
        let weight = config.weight_of(id);
        let mut member_term = 0.0;

        let groups = [
            (config.a1(), Competitors::OtherClass),
            (config.a2(), Competitors::SameClass),
        ];
        for (margin, kind) in groups {
            let competitor_ids: Vec<usize> = (0..m_count)
                .filter(|&k| match kind {
                    Competitors::OtherClass => clusters[k].class != clusters[m].class,
                    Competitors::SameClass => {
                        k != m && clusters[k].class == clusters[m].class
                    }
                })
                .collect();
            if competitor_ids.is_empty() {
                continue;
            }
            let lse = log_sum_exp(competitor_ids.iter().map(|&k| sims[k]));
            let hinge = lse - (sims[m] - margin);
            if hinge > 0.0 {
                member_term += hinge;
                out.value += scale * weight * hinge;
                let coeff = scale * weight;
                // Softmax over the competitor similarities.
                let max = competitor_ids
                    .iter()
                    .map(|&k| sims[k])
                    .fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = competitor_ids.iter().map(|&k| (sims[k] - max).exp()).sum();
                for &k in &competitor_ids {
                    sim_grads[row][k] += coeff * (sims[k] - max).exp() / denom;
                }
                sim_grads[row][m] -= coeff;
            }
        }
        *out.per_sample.get_mut(&id).unwrap() += member_term;
    }

    // Direct path: d s[i][k] / d f_i = centroid_k.
    let mut centroid_grads: Vec<Vec<f64>> = vec![vec![0.0; dim]; m_count];
    for (row, &(_, id)) in members.iter().enumerate() {
        let f = lookup(embeddings, id)?;
        let g = out.grads.get_mut(&id).unwrap();
        for k in 0..m_count {
            let gs = sim_grads[row][k];
            if gs == 0.0 {
                continue;
            }
            for j in 0..dim {
                g[j] += gs * centroids[k][j];
            }
            // Centroid path: d s[i][k] / d centroid_k = f_i.
            for j in 0..dim {
                centroid_grads[k][j] += gs * f[j];
            }
        }
    }

    // Chain rule through the normalized member sum:
    // d(centroid)/d(sum) = (I - c c^T) / ||sum||, and d(sum)/d(f_j) = I
    // for every member j of the cluster.
    for (k, cluster) in clusters.iter().enumerate() {
        let gc = &centroid_grads[k];
        if gc.iter().all(|&x| x == 0.0) {
            continue;
        }
        let radial = dot(gc, &centroids[k]);
        let through: Vec<f64> = gc
            .iter()
            .zip(&centroids[k])
            .map(|(g, c)| (g - radial * c) / norms[k])
            .collect();
        for &id in &cluster.members {
            let g = out.grads.get_mut(&id).unwrap();
            for j in 0..dim {
                g[j] += through[j];
            }
        }
    }

    Ok(out)
}

enum Competitors {
    OtherClass,
    SameClass,
}

#[cfg(test)]
mod tests {
    use super::super::test_util::*;
    use super::*;
    use approx::assert_abs_diff_eq;

    fn config(a1: f64, a2: f64) -> ClmleConfig {
        ClmleConfig::new(a1, a2).unwrap()
    }

    #[test]
    fn satisfied_margin_clips_to_zero() {
        // Two singleton clusters at antipodes: own similarity 1, competitor -1.
        let embeddings: Embeddings = [
            (0usize, vec![1.0, 0.0]),
            (1, vec![-1.0, 0.0]),
        ]
        .into_iter()
        .collect();
        let clusters = vec![
            BatchCluster { cluster_id: 0, class: 0, members: vec![0] },
            BatchCluster { cluster_id: 1, class: 1, members: vec![1] },
        ];
        let out = clmle_loss(&embeddings, &clusters, &config(0.0, 0.0)).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.grads.values().flatten().all(|&g| g == 0.0));
    }

    #[test]
    fn violated_margin_costs_the_log_ratio() {
        // Member 0 sits antipodal to its own cluster centroid (own sim -1)
        // while a different-class centroid matches it exactly (sim +1):
        // its term is [-log(e^{-1}/e^{1})]_+ = 2. The other members' terms
        // clip to zero, and the batch normalizer is 1/3.
        let embeddings: Embeddings = [
            (0usize, vec![1.0, 0.0]),
            (1, vec![-3.0, 0.0]),
            (2, vec![1.0, 0.0]),
        ]
        .into_iter()
        .collect();
        let clusters = vec![
            BatchCluster { cluster_id: 0, class: 0, members: vec![0, 1] },
            BatchCluster { cluster_id: 1, class: 1, members: vec![2] },
        ];
        let out = clmle_loss(&embeddings, &clusters, &config(0.0, 0.0)).unwrap();
        assert_abs_diff_eq!(out.value, 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(out.per_sample[&0], 2.0, epsilon = 1e-12);
        assert_eq!(out.per_sample[&1], 0.0);
        assert_eq!(out.per_sample[&2], 0.0);
    }

    #[test]
    fn single_cluster_batch_rejected() {
        let embeddings: Embeddings = [(0usize, vec![1.0, 0.0])].into_iter().collect();
        let clusters = vec![BatchCluster { cluster_id: 0, class: 0, members: vec![0] }];
        assert!(matches!(
            clmle_loss(&embeddings, &clusters, &config(0.1, 0.0)),
            Err(Error::SingleClusterBatch(1))
        ));
    }

    #[test]
    fn empty_competitor_sets_contribute_zero() {
        // Both clusters share one class: no between-class term anywhere.
        let embeddings: Embeddings = [
            (0usize, vec![1.0, 0.0]),
            (1, vec![0.0, 1.0]),
        ]
        .into_iter()
        .collect();
        let clusters = vec![
            BatchCluster { cluster_id: 0, class: 0, members: vec![0] },
            BatchCluster { cluster_id: 1, class: 0, members: vec![1] },
        ];
        let out = clmle_loss(&embeddings, &clusters, &config(0.0, 0.0)).unwrap();
        // Within-class term per member: [s(other) - s(own) + 0]_+ = [0 - 1]_+ = 0.
        assert_eq!(out.value, 0.0);
    }

    fn random_batch(seed: u64) -> (Embeddings, Vec<BatchCluster>) {
        let ids: Vec<usize> = (0..20).collect();
        let embeddings = random_unit_embeddings(&ids, 8, seed);
        let clusters = vec![
            BatchCluster { cluster_id: 0, class: 0, members: (0..5).collect() },
            BatchCluster { cluster_id: 1, class: 0, members: (5..10).collect() },
            BatchCluster { cluster_id: 2, class: 1, members: (10..15).collect() },
            BatchCluster { cluster_id: 3, class: 2, members: (15..20).collect() },
        ];
        (embeddings, clusters)
    }

    #[test]
    fn gradient_matches_finite_differences_including_centroid_path() {
        for seed in [3u64, 14, 59] {
            let (embeddings, clusters) = random_batch(seed);
            let cfg = config(0.4, 0.15);
            let out = clmle_loss(&embeddings, &clusters, &cfg).unwrap();
            assert!(out.value > 0.0);
            let fd = finite_difference_grads(
                |emb| clmle_loss(emb, &clusters, &cfg).unwrap().value,
                &embeddings,
                1e-5,
            );
            let err = grad_relative_error(&out.grads, &fd);
            assert!(err < 1e-5, "seed {seed}: relative error {err}");
        }
    }

    #[test]
    fn weighted_gradient_matches_finite_differences() {
        let (embeddings, clusters) = random_batch(8);
        let weights: BTreeMap<usize, f64> = embeddings
            .keys()
            .map(|&id| (id, 0.25 + (id % 4) as f64 * 0.5))
            .collect();
        let cfg = config(0.3, 0.1).with_weights(weights).unwrap();
        let out = clmle_loss(&embeddings, &clusters, &cfg).unwrap();
        let fd = finite_difference_grads(
            |emb| clmle_loss(emb, &clusters, &cfg).unwrap().value,
            &embeddings,
            1e-5,
        );
        let err = grad_relative_error(&out.grads, &fd);
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn cost_weights_scale_value_and_grads_exactly() {
        let (embeddings, clusters) = random_batch(21);
        let base: BTreeMap<usize, f64> = embeddings
            .keys()
            .map(|&id| (id, 0.5 + (id % 3) as f64))
            .collect();
        let lambda = 2.0; // power of two: scaling commutes with rounding
        let scaled: BTreeMap<usize, f64> =
            base.iter().map(|(&id, &w)| (id, lambda * w)).collect();
        let cfg_base = config(0.3, 0.1).with_weights(base).unwrap();
        let cfg_scaled = config(0.3, 0.1).with_weights(scaled).unwrap();
        let out_base = clmle_loss(&embeddings, &clusters, &cfg_base).unwrap();
        let out_scaled = clmle_loss(&embeddings, &clusters, &cfg_scaled).unwrap();
        assert_eq!(out_scaled.value, lambda * out_base.value);
        for (id, g) in &out_base.grads {
            for (a, b) in g.iter().zip(&out_scaled.grads[id]) {
                assert_eq!(*b, lambda * a);
            }
        }
    }

    #[test]
    fn reduces_to_single_margin_form_when_every_cluster_is_its_own_class() {
        // With one cluster per class and a1 = a2 = 0, only the between-class
        // term fires and the loss must equal the single-margin hinged form
        // [-log(e^{s_own - a} / sum_{k != m} e^{s_k})]_+ evaluated naively.
        let ids: Vec<usize> = (0..12).collect();
        let embeddings = random_unit_embeddings(&ids, 6, 33);
        let clusters: Vec<BatchCluster> = (0..4)
            .map(|c| BatchCluster {
                cluster_id: c,
                class: c,
                members: (c * 3..(c + 1) * 3).collect(),
            })
            .collect();
        let out = clmle_loss(&embeddings, &clusters, &config(0.0, 0.0)).unwrap();

        // Naive independent evaluation.
        let centroid = |c: &BatchCluster| {
            let mut sum = vec![0.0; 6];
            for &id in &c.members {
                for (s, x) in sum.iter_mut().zip(&embeddings[&id]) {
                    *s += x;
                }
            }
            let norm = l2_norm(&sum);
            sum.into_iter().map(|s| s / norm).collect::<Vec<f64>>()
        };
        let centroids: Vec<Vec<f64>> = clusters.iter().map(centroid).collect();
        let mut naive = 0.0;
        for (m, cluster) in clusters.iter().enumerate() {
            for &id in &cluster.members {
                let f = &embeddings[&id];
                let own = dot(f, &centroids[m]);
                let denom: f64 = (0..4)
                    .filter(|&k| k != m)
                    .map(|k| dot(f, &centroids[k]).exp())
                    .sum();
                naive += (-((own - 0.0).exp() / denom).ln()).max(0.0);
            }
        }
        naive /= 12.0;
        assert_abs_diff_eq!(out.value, naive, epsilon = 1e-9);
    }
}
