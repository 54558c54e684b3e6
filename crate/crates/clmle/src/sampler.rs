//! Mini-batch construction: round-robin query-cluster selection by cached
//! loss, nearest-cluster retrieval with a same/different-class mixture
//! guarantee, member subsampling, and inverse-class-frequency cost weights.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::clustering::ClusterIndex;
use crate::error::{Error, Result};
use crate::hypersphere::dot;
use crate::losses::BatchCluster;

/// Default decay for the per-cluster loss moving average.
pub const DEFAULT_LOSS_EMA_BETA: f64 = 0.5;

/// One training batch: the query cluster, its retrieved companions, the
/// sampled member ids per cluster, and mean-one cost weights.
#[derive(Debug, Clone)]
pub struct MiniBatch {
    pub query_cluster: usize,
    /// All M cluster ids, query first, retrieved in similarity order.
    pub cluster_ids: Vec<usize>,
    /// Sampled member ids per cluster, ascending, keyed in `cluster_ids` order.
    pub members: Vec<Vec<usize>>,
    /// Inverse-class-frequency weights, normalized to mean 1 over the batch.
    pub cost_weights: BTreeMap<usize, f64>,
    /// Class label per sampled member.
    pub labels: BTreeMap<usize, usize>,
}

impl MiniBatch {
    /// Total sampled member count.
    pub fn size(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }

    /// All sampled ids in cluster order.
    pub fn sample_ids(&self) -> Vec<usize> {
        self.members.iter().flatten().copied().collect()
    }

    /// The batch viewed as loss-ready clusters.
    pub fn batch_clusters(&self, index: &ClusterIndex) -> Vec<BatchCluster> {
        self.cluster_ids
            .iter()
            .zip(&self.members)
            .map(|(&cluster_id, members)| BatchCluster {
                cluster_id,
                class: index.cluster(cluster_id).class,
                members: members.clone(),
            })
            .collect()
    }
}

/// Exponential moving average of per-cluster member losses, plus the last
/// observed per-sample losses used to re-seed refreshed clusters. Clusters
/// without a finite entry score +infinity, so they are always eligible as
/// "hardest".
#[derive(Debug, Clone)]
pub struct LossCache {
    ema: BTreeMap<usize, f64>,
    beta: f64,
    last_sample_losses: BTreeMap<usize, f64>,
}

impl LossCache {
    pub fn new(beta: f64) -> Self {
        Self {
            ema: BTreeMap::new(),
            beta,
            last_sample_losses: BTreeMap::new(),
        }
    }

    /// Cached loss for a cluster; +infinity when never scored.
    pub fn cluster_loss(&self, cluster_id: usize) -> f64 {
        self.ema.get(&cluster_id).copied().unwrap_or(f64::INFINITY)
    }

    pub fn last_sample_losses(&self) -> &BTreeMap<usize, f64> {
        &self.last_sample_losses
    }

    /// Re-seeds the per-cluster averages for a refreshed index: each new
    /// cluster starts from the mean of its members' last observed losses, or
    /// +infinity when none of them was ever scored.
    pub fn reseed(&mut self, index: &ClusterIndex) {
        let mut ema = BTreeMap::new();
        for cluster in index.clusters() {
            let observed: Vec<f64> = cluster
                .members
                .iter()
                .filter_map(|id| self.last_sample_losses.get(id).copied())
                .collect();
            if !observed.is_empty() {
                ema.insert(
                    cluster.id,
                    observed.iter().sum::<f64>() / observed.len() as f64,
                );
            }
        }
        self.ema = ema;
    }
}

/// Round-robin cursor over the class labels, so every class seeds a query
/// cluster exactly once per cycle.
#[derive(Debug, Clone)]
pub struct ClassCursor {
    classes: Vec<usize>,
    position: usize,
}

impl ClassCursor {
    pub fn new(index: &ClusterIndex) -> Result<Self> {
        let classes = index.classes();
        if classes.is_empty() {
            return Err(Error::EmptyIndex);
        }
        Ok(Self {
            classes,
            position: 0,
        })
    }

    fn advance(&mut self) -> usize {
        let class = self.classes[self.position];
        self.position = (self.position + 1) % self.classes.len();
        class
    }
}

/// Advances the class cursor and returns that class's cluster with the
/// maximal cached loss; ties break toward the lowest cluster id.
pub fn select_query_cluster(
    index: &ClusterIndex,
    cache: &LossCache,
    cursor: &mut ClassCursor,
) -> Result<usize> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    let class = cursor.advance();
    let clusters = index.clusters_of_class(class);
    let mut best: Option<(f64, usize)> = None;
    for id in clusters {
        let loss = cache.cluster_loss(id);
        let better = match best {
            None => true,
            Some((bl, _)) => loss > bl,
        };
        if better {
            best = Some((loss, id));
        }
    }
    best.map(|(_, id)| id).ok_or(Error::EmptyIndex)
}

/// Retrieves the `count` clusters most similar to the query cluster's
/// centroid by inner product, then enforces that the result mixes same-class
/// and different-class clusters whenever both exist: the least similar member
/// of the overrepresented kind is swapped for the most similar missing-kind
/// cluster (at most one swap per kind, and never the last of a kind).
pub fn retrieve_nearest_clusters(
    index: &ClusterIndex,
    query_cluster: usize,
    count: usize,
) -> Result<Vec<usize>> {
    if index.len() < count + 1 {
        return Err(Error::TooFewClusters {
            requested: count + 1,
            available: index.len(),
        });
    }
    let query = index.cluster(query_cluster);
    let mut ranked: Vec<(f64, usize)> = index
        .clusters()
        .iter()
        .filter(|c| c.id != query_cluster)
        .map(|c| {
            (
                dot(query.centroid.as_slice(), c.centroid.as_slice()),
                c.id,
            )
        })
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut result: Vec<(f64, usize)> = ranked[..count].to_vec();
    let pool = &ranked[count..];
    let is_same = |id: usize| index.cluster(id).class == query.class;

    for want_same in [true, false] {
        let have_kind = result.iter().any(|&(_, id)| is_same(id) == want_same);
        if have_kind {
            continue;
        }
        let best_missing = pool.iter().find(|&&(_, id)| is_same(id) == want_same);
        let Some(&incoming) = best_missing else {
            continue; // the missing kind does not exist outside the result
        };
        // Swap out the least similar member of the (over-represented) other
        // kind, but never its last representative.
        let other_count = result.iter().filter(|&&(_, id)| is_same(id) != want_same).count();
        if other_count < 2 {
            continue;
        }
        let out_pos = result
            .iter()
            .rposition(|&(_, id)| is_same(id) != want_same)
            .expect("other kind is present");
        result.remove(out_pos);
        result.push(incoming);
    }

    result.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(result.into_iter().map(|(_, id)| id).collect())
}

/// Uniformly samples up to `n_sub` members per cluster without replacement
/// and attaches cost weights `w_i = B / (C_batch * n_{label(i)})`, normalized
/// to mean one.
pub fn subsample_and_weight(
    index: &ClusterIndex,
    cluster_ids: &[usize],
    n_sub: usize,
    rng_seed: u64,
) -> Result<MiniBatch> {
    if cluster_ids.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if n_sub == 0 {
        return Err(Error::ConfigError("n_sub must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut members = Vec::with_capacity(cluster_ids.len());
    let mut labels = BTreeMap::new();
    for &cluster_id in cluster_ids {
        let cluster = index.cluster(cluster_id);
        let take = n_sub.min(cluster.members.len());
        let mut chosen: Vec<usize> =
            rand::seq::index::sample(&mut rng, cluster.members.len(), take)
                .into_iter()
                .map(|pos| cluster.members[pos])
                .collect();
        chosen.sort_unstable();
        for &id in &chosen {
            labels.insert(id, cluster.class);
        }
        members.push(chosen);
    }

    let batch_size: usize = members.iter().map(Vec::len).sum();
    let mut class_counts: BTreeMap<usize, usize> = BTreeMap::new();
    for &class in labels.values() {
        *class_counts.entry(class).or_insert(0) += 1;
    }
    let class_count = class_counts.len();
    let mut cost_weights: BTreeMap<usize, f64> = labels
        .iter()
        .map(|(&id, &class)| {
            (
                id,
                batch_size as f64 / (class_count as f64 * class_counts[&class] as f64),
            )
        })
        .collect();
    // The formula already has mean one; renormalize to absorb rounding.
    let mean: f64 = cost_weights.values().sum::<f64>() / batch_size as f64;
    for w in cost_weights.values_mut() {
        *w /= mean;
    }

    Ok(MiniBatch {
        query_cluster: cluster_ids[0],
        cluster_ids: cluster_ids.to_vec(),
        members,
        cost_weights,
        labels,
    })
}

/// Folds the batch's per-sample losses into the cache: every involved cluster
/// moves toward the mean loss of its sampled members (`ema <- (1-beta)*ema +
/// beta*mean`), unscored clusters adopt the mean outright, and each sample's
/// last observed loss is recorded.
pub fn update_loss_cache(
    cache: &mut LossCache,
    per_sample: &BTreeMap<usize, f64>,
    batch: &MiniBatch,
) {
    for (&cluster_id, members) in batch.cluster_ids.iter().zip(&batch.members) {
        let observed: Vec<f64> = members
            .iter()
            .filter_map(|id| per_sample.get(id).copied())
            .collect();
        if observed.is_empty() {
            continue;
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        let updated = match cache.ema.get(&cluster_id) {
            Some(&prev) if prev.is_finite() => (1.0 - cache.beta) * prev + cache.beta * mean,
            _ => mean,
        };
        cache.ema.insert(cluster_id, updated);
    }
    for members in &batch.members {
        for id in members {
            if let Some(&loss) = per_sample.get(id) {
                cache.last_sample_losses.insert(*id, loss);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypersphere::normalize;
    use approx::assert_abs_diff_eq;
    use rand_chacha::ChaCha8Rng;

    /// Index whose classes have the given per-class sample counts, clustered
    /// at the given target size, with smooth circle embeddings.
    fn make_index(class_sizes: &[usize], cluster_size: usize, seed: u64) -> ClusterIndex {
        let mut embeddings = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut id = 0usize;
        for (class, &size) in class_sizes.iter().enumerate() {
            for j in 0..size {
                let angle = class as f64 * 2.5 + j as f64 * 0.01;
                embeddings.insert(id, normalize(&[angle.cos(), angle.sin()]).unwrap());
                labels.insert(id, class);
                id += 1;
            }
        }
        ClusterIndex::build(&embeddings, &labels, cluster_size, 50, seed).unwrap()
    }

    #[test]
    fn query_selection_takes_argmax_loss_in_cursor_class() {
        let index = make_index(&[8, 8], 4, 0);
        let class0 = index.clusters_of_class(0);
        assert_eq!(class0.len(), 2);
        let mut cache = LossCache::new(DEFAULT_LOSS_EMA_BETA);
        cache.ema.insert(class0[0], 1.2);
        cache.ema.insert(class0[1], 3.4);
        let mut cursor = ClassCursor::new(&index).unwrap();
        let chosen = select_query_cluster(&index, &cache, &mut cursor).unwrap();
        assert_eq!(chosen, class0[1]);
    }

    #[test]
    fn cold_start_tie_breaks_to_lowest_cluster_id() {
        let index = make_index(&[8, 8], 4, 0);
        let cache = LossCache::new(DEFAULT_LOSS_EMA_BETA);
        let mut cursor = ClassCursor::new(&index).unwrap();
        let chosen = select_query_cluster(&index, &cache, &mut cursor).unwrap();
        assert_eq!(chosen, index.clusters_of_class(0)[0]);
    }

    #[test]
    fn round_robin_visits_every_class_once_per_cycle() {
        let index = make_index(&[6, 6, 6, 6], 3, 1);
        let cache = LossCache::new(DEFAULT_LOSS_EMA_BETA);
        let mut cursor = ClassCursor::new(&index).unwrap();
        let mut seen = Vec::new();
        for _ in 0..4 {
            let cluster = select_query_cluster(&index, &cache, &mut cursor).unwrap();
            seen.push(index.cluster(cluster).class);
        }
        seen.sort_unstable();
        assert_eq!(seen, vec![0, 1, 2, 3]);
    }

    #[test]
    fn retrieval_is_sorted_and_errors_when_too_few() {
        let index = make_index(&[8, 8], 4, 2);
        let query = index.clusters_of_class(0)[0];
        let got = retrieve_nearest_clusters(&index, query, 3).unwrap();
        assert_eq!(got.len(), 3);
        assert!(matches!(
            retrieve_nearest_clusters(&index, query, 4),
            Err(Error::TooFewClusters { .. })
        ));
    }

    #[test]
    fn retrieval_matches_brute_force_with_documented_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..100u64 {
            let class_sizes: Vec<usize> = (0..rng.random_range(2..5))
                .map(|_| rng.random_range(6..20))
                .collect();
            let index = {
                // Random embeddings rather than the smooth circle.
                let mut embeddings = BTreeMap::new();
                let mut labels = BTreeMap::new();
                let mut id = 0usize;
                for (class, &size) in class_sizes.iter().enumerate() {
                    for _ in 0..size {
                        let v: Vec<f64> =
                            (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                        embeddings.insert(id, normalize(&v).unwrap());
                        labels.insert(id, class);
                        id += 1;
                    }
                }
                ClusterIndex::build(&embeddings, &labels, 3, 50, trial).unwrap()
            };
            let query = rng.random_range(0..index.len());
            let count = rng.random_range(1..index.len());
            let got = retrieve_nearest_clusters(&index, query, count).unwrap();

            // Independent oracle: full ranking, then the documented swap.
            let qc = index.cluster(query);
            let mut ranked: Vec<(f64, usize)> = index
                .clusters()
                .iter()
                .filter(|c| c.id != query)
                .map(|c| (dot(qc.centroid.as_slice(), c.centroid.as_slice()), c.id))
                .collect();
            ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut expect: Vec<(f64, usize)> = ranked[..count].to_vec();
            let pool = &ranked[count..];
            let same = |id: usize| index.cluster(id).class == qc.class;
            for want_same in [true, false] {
                if expect.iter().any(|&(_, id)| same(id) == want_same) {
                    continue;
                }
                let Some(&incoming) = pool.iter().find(|&&(_, id)| same(id) == want_same)
                else {
                    continue;
                };
                if expect.iter().filter(|&&(_, id)| same(id) != want_same).count() < 2 {
                    continue;
                }
                let pos = expect
                    .iter()
                    .rposition(|&(_, id)| same(id) != want_same)
                    .unwrap();
                expect.remove(pos);
                expect.push(incoming);
            }
            expect.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let expect_ids: Vec<usize> = expect.into_iter().map(|(_, id)| id).collect();
            assert_eq!(got, expect_ids, "trial {trial}");
        }
    }

    #[test]
    fn mixture_swap_restores_missing_class() {
        // Class 0 clusters huddle together; class 1 sits far away, so pure
        // similarity retrieval would return only class 0.
        let mut embeddings = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut id = 0;
        for j in 0..12 {
            let angle = 0.02 * j as f64;
            embeddings.insert(id, normalize(&[angle.cos(), angle.sin()]).unwrap());
            labels.insert(id, 0usize);
            id += 1;
        }
        for j in 0..4 {
            let angle = std::f64::consts::PI + 0.02 * j as f64;
            embeddings.insert(id, normalize(&[angle.cos(), angle.sin()]).unwrap());
            labels.insert(id, 1usize);
            id += 1;
        }
        let index = ClusterIndex::build(&embeddings, &labels, 2, 50, 3).unwrap();
        let query = index.clusters_of_class(0)[0];
        let got = retrieve_nearest_clusters(&index, query, 3).unwrap();
        let classes: Vec<usize> = got.iter().map(|&c| index.cluster(c).class).collect();
        assert!(classes.contains(&0));
        assert!(classes.contains(&1));
    }

    #[test]
    fn default_config_builds_240_sample_batches_with_exact_weights() {
        // 8 clusters of class A and 4 of class B at l = 200, n_sub = 20:
        // batch of 240 with weights 240/(2*160) and 240/(2*80).
        let index = make_index(&[1600, 800], 200, 7);
        assert_eq!(index.len(), 12);
        let cluster_ids: Vec<usize> = (0..12).collect();
        let batch = subsample_and_weight(&index, &cluster_ids, 20, 11).unwrap();
        assert_eq!(batch.size(), 240);
        for (&id, &class) in &batch.labels {
            let expected = if class == 0 { 0.75 } else { 1.5 };
            assert_abs_diff_eq!(batch.cost_weights[&id], expected, epsilon = 1e-12);
        }
        let mean: f64 =
            batch.cost_weights.values().sum::<f64>() / batch.size() as f64;
        assert_abs_diff_eq!(mean, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn single_class_batch_weighs_everyone_one() {
        let index = make_index(&[40], 10, 3);
        let ids: Vec<usize> = index.clusters().iter().map(|c| c.id).collect();
        let batch = subsample_and_weight(&index, &ids, 5, 0).unwrap();
        for w in batch.cost_weights.values() {
            assert_abs_diff_eq!(*w, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn small_clusters_are_sampled_fully() {
        let index = make_index(&[5, 5], 5, 9);
        let ids: Vec<usize> = index.clusters().iter().map(|c| c.id).collect();
        let batch = subsample_and_weight(&index, &ids, 50, 0).unwrap();
        assert_eq!(batch.size(), 10);
        for (cluster, members) in batch.cluster_ids.iter().zip(&batch.members) {
            assert_eq!(members, &index.cluster(*cluster).members);
        }
    }

    #[test]
    fn subsampling_is_deterministic_in_seed() {
        let index = make_index(&[30, 30], 5, 1);
        let ids: Vec<usize> = index.clusters().iter().map(|c| c.id).collect();
        let a = subsample_and_weight(&index, &ids, 3, 42).unwrap();
        let b = subsample_and_weight(&index, &ids, 3, 42).unwrap();
        assert_eq!(a.members, b.members);
        let c = subsample_and_weight(&index, &ids, 3, 43).unwrap();
        assert!(a.members != c.members || a.sample_ids() == c.sample_ids());
    }

    #[test]
    fn loss_cache_update_rules() {
        let index = make_index(&[8, 8], 4, 0);
        let ids: Vec<usize> = index.clusters().iter().map(|c| c.id).collect();
        let batch = subsample_and_weight(&index, &ids[..2], 4, 0).unwrap();
        let mut cache = LossCache::new(0.5);

        // Cold cluster adopts the observed mean outright.
        let per_sample: BTreeMap<usize, f64> =
            batch.sample_ids().into_iter().map(|id| (id, 2.0)).collect();
        update_loss_cache(&mut cache, &per_sample, &batch);
        assert_abs_diff_eq!(cache.cluster_loss(ids[0]), 2.0, epsilon = 1e-12);

        // Warm cluster moves halfway toward the new mean at beta = 0.5.
        let per_sample: BTreeMap<usize, f64> =
            batch.sample_ids().into_iter().map(|id| (id, 4.0)).collect();
        update_loss_cache(&mut cache, &per_sample, &batch);
        assert_abs_diff_eq!(cache.cluster_loss(ids[0]), 3.0, epsilon = 1e-12);

        // Unobserved clusters stay at +infinity.
        assert!(cache.cluster_loss(ids[3]).is_infinite());
    }

    #[test]
    fn reseed_uses_member_loss_history() {
        let index = make_index(&[8, 8], 4, 0);
        let mut cache = LossCache::new(0.5);
        let cluster0 = &index.clusters()[0];
        for (j, &id) in cluster0.members.iter().enumerate() {
            cache.last_sample_losses.insert(id, j as f64);
        }
        cache.reseed(&index);
        let expected = (0..cluster0.members.len()).sum::<usize>() as f64
            / cluster0.members.len() as f64;
        assert_abs_diff_eq!(cache.cluster_loss(cluster0.id), expected, epsilon = 1e-12);
        // A cluster whose members were never scored stays infinite.
        assert!(cache.cluster_loss(index.clusters()[3].id).is_infinite());
    }
}
