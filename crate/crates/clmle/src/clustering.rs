//! Per-class spherical k-means with equal-size clusters.
//!
//! Every class is partitioned into `K = max(1, floor(L_c / l))` clusters of
//! (approximately) `l` members each, maximizing the sum of member-to-centroid
//! inner products. Equal sizes keep the collapse difficulty comparable across
//! clusters, which is what the margin loss assumes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypersphere::{dot, l2_norm, UnitVector, ZERO_NORM_TOL};

/// Snapshot format version for [`ClusterIndex::save`].
const SNAPSHOT_VERSION: u32 = 1;

/// One fixed-size cluster of same-class samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cluster {
    /// Global cluster id, unique across classes.
    pub id: usize,
    /// Class label shared by all members.
    pub class: usize,
    /// Member sample ids, sorted ascending.
    pub members: Vec<usize>,
    /// Unit-norm centroid (normalized member mean).
    pub centroid: UnitVector,
}

/// The per-class clustering of one class, in class-local terms.
#[derive(Debug, Clone)]
pub struct ClassClusters {
    /// Member positions (indices into the input feature list) per cluster.
    pub assignments: Vec<Vec<usize>>,
    /// Unit-norm centroid per cluster.
    pub centroids: Vec<UnitVector>,
    /// Objective value recorded after every assignment and centroid step.
    pub objective_trace: Vec<f64>,
}

/// Running index of all classes' clusters, refreshed periodically from the
/// latest embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterIndex {
    clusters: Vec<Cluster>,
    cluster_size_target: usize,
    max_iters: usize,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    index: ClusterIndex,
}

impl ClusterIndex {
    /// Clusters every class of `embeddings` (sample id -> unit embedding,
    /// sample id -> label) into equal-size clusters.
    pub fn build(
        embeddings: &BTreeMap<usize, UnitVector>,
        labels: &BTreeMap<usize, usize>,
        cluster_size: usize,
        max_iters: usize,
        seed: u64,
    ) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (&id, &label) in labels {
            if embeddings.contains_key(&id) {
                by_class.entry(label).or_default().push(id);
            }
        }
        let mut clusters = Vec::new();
        for (&class, ids) in &by_class {
            let features: Vec<UnitVector> =
                ids.iter().map(|id| embeddings[id].clone()).collect();
            let class_seed = splitmix64(seed ^ splitmix64(class as u64));
            let parts = cluster_class(&features, cluster_size, max_iters, class_seed)?;
            for (assignment, centroid) in parts.assignments.iter().zip(parts.centroids) {
                let mut members: Vec<usize> = assignment.iter().map(|&p| ids[p]).collect();
                members.sort_unstable();
                clusters.push(Cluster {
                    id: clusters.len(),
                    class,
                    members,
                    centroid,
                });
            }
        }
        Ok(Self {
            clusters,
            cluster_size_target: cluster_size,
            max_iters,
            seed,
        })
    }

    /// Re-clusters every class on the latest embeddings with the same target
    /// size and seed. Identical embeddings reproduce the identical partition.
    pub fn refresh_all(&self, embeddings: &BTreeMap<usize, UnitVector>) -> Result<Self> {
        let labels = self.labels();
        Self::build(
            embeddings,
            &labels,
            self.cluster_size_target,
            self.max_iters,
            self.seed,
        )
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn cluster(&self, id: usize) -> &Cluster {
        &self.clusters[id]
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn cluster_size_target(&self) -> usize {
        self.cluster_size_target
    }

    /// Class labels present, ascending.
    pub fn classes(&self) -> Vec<usize> {
        let mut classes: Vec<usize> = self.clusters.iter().map(|c| c.class).collect();
        classes.sort_unstable();
        classes.dedup();
        classes
    }

    /// Cluster ids belonging to one class, ascending.
    pub fn clusters_of_class(&self, class: usize) -> Vec<usize> {
        self.clusters
            .iter()
            .filter(|c| c.class == class)
            .map(|c| c.id)
            .collect()
    }

    /// Sample id -> class label map reconstructed from the clusters.
    pub fn labels(&self) -> BTreeMap<usize, usize> {
        let mut labels = BTreeMap::new();
        for cluster in &self.clusters {
            for &id in &cluster.members {
                labels.insert(id, cluster.class);
            }
        }
        labels
    }

    /// Writes a versioned JSON snapshot (ids + centroid arrays).
    pub fn save(&self, path: &Path) -> Result<()> {
        let snapshot = Snapshot {
            version: SNAPSHOT_VERSION,
            index: self.clone(),
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), &snapshot)?;
        Ok(())
    }

    /// Loads a snapshot written by [`ClusterIndex::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let snapshot: Snapshot = serde_json::from_reader(std::io::BufReader::new(file))?;
        if snapshot.version != SNAPSHOT_VERSION {
            return Err(Error::ConfigError(format!(
                "unsupported cluster snapshot version {}",
                snapshot.version
            )));
        }
        Ok(snapshot.index)
    }
}

/// Normalized arithmetic mean of a non-empty member set.
pub fn recompute_centroid<'a, I>(members: I) -> Result<UnitVector>
where
    I: IntoIterator<Item = &'a UnitVector>,
{
    let mut iter = members.into_iter();
    let first = iter.next().ok_or(Error::EmptyInput)?;
    let mut sum: Vec<f64> = first.as_slice().to_vec();
    let mut count = 1usize;
    for v in iter {
        for (s, x) in sum.iter_mut().zip(v.as_slice()) {
            *s += x;
        }
        count += 1;
    }
    for s in &mut sum {
        *s /= count as f64;
    }
    let norm = l2_norm(&sum);
    if norm < ZERO_NORM_TOL {
        return Err(Error::DegenerateCentroid { norm });
    }
    Ok(UnitVector::new(sum.iter().map(|s| s / norm).collect())
        .expect("normalized mean is unit-norm"))
}

/// The clustering objective: sum over clusters of member-to-centroid inner
/// products. Bounded above by the total member count.
pub fn clustering_objective(assignments: &[Vec<usize>], centroids: &[UnitVector], features: &[UnitVector]) -> f64 {
    assignments
        .iter()
        .zip(centroids)
        .map(|(members, centroid)| {
            members
                .iter()
                .map(|&i| dot(features[i].as_slice(), centroid.as_slice()))
                .sum::<f64>()
        })
        .sum()
}

/// Partitions one class's features into `K = max(1, floor(L_c / l))`
/// equal-size clusters by alternating a greedy capacity-constrained
/// assignment with normalized-mean centroid updates.
///
/// The greedy assignment sorts all (sample, centroid) similarity pairs
/// descending and fills each cluster up to capacity `l`; the `L_c mod l`
/// leftovers go to their most similar centroid, at most `ceil(r/K)` extras
/// per cluster. A greedy assignment that would lower the objective under the
/// current centroids is discarded, so the objective trace is non-decreasing.
pub fn cluster_class(
    features: &[UnitVector],
    cluster_size: usize,
    max_iters: usize,
    rng_seed: u64,
) -> Result<ClassClusters> {
    if features.is_empty() {
        return Err(Error::EmptyInput);
    }
    assert!(cluster_size >= 1, "cluster_size must be >= 1");
    assert!(max_iters >= 1, "max_iters must be >= 1");
    let n = features.len();
    let k = (n / cluster_size).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let mut centroids = seed_centroids(features, k, &mut rng);
    let mut assignments: Option<Vec<Vec<usize>>> = None;
    let mut trace = Vec::new();

    for _ in 0..max_iters {
        let candidate = balanced_assignment(features, &centroids, cluster_size);
        let candidate_obj = clustering_objective(&candidate, &centroids, features);
        match &assignments {
            Some(prev) => {
                let prev_obj = clustering_objective(prev, &centroids, features);
                if candidate_obj < prev_obj {
                    // Greedy assignment cannot improve on the previous one.
                    break;
                }
                let unchanged = *prev == candidate;
                trace.push(candidate_obj);
                assignments = Some(candidate);
                if unchanged {
                    break;
                }
            }
            None => {
                trace.push(candidate_obj);
                assignments = Some(candidate);
            }
        }

        let current = assignments.as_ref().expect("assignment set above");
        for (members, centroid) in current.iter().zip(centroids.iter_mut()) {
            let member_vecs: Vec<&UnitVector> = members.iter().map(|&i| &features[i]).collect();
            match recompute_centroid(member_vecs.into_iter()) {
                Ok(c) => *centroid = c,
                // Antipodal degenerate cluster: keep the previous centroid.
                Err(Error::DegenerateCentroid { .. }) => {}
                Err(e) => return Err(e),
            }
        }
        trace.push(clustering_objective(current, &centroids, features));
    }

    let assignments = assignments.expect("at least one iteration ran");
    Ok(ClassClusters {
        assignments,
        centroids,
        objective_trace: trace,
    })
}

/// k-means++-style seeding on cosine distance: the first centroid is a
/// uniformly random sample, each further one is drawn with probability
/// proportional to the cosine distance to its nearest chosen centroid.
fn seed_centroids(features: &[UnitVector], k: usize, rng: &mut ChaCha8Rng) -> Vec<UnitVector> {
    let n = features.len();
    let first = rng.random_range(0..n);
    let mut centroids = vec![features[first].clone()];
    // Cosine distance, clamped: float drift can push a self-similarity above 1.
    let cos_dist = |f: &UnitVector, c: &UnitVector| (1.0 - dot(f.as_slice(), c.as_slice())).max(0.0);
    let mut nearest_dist: Vec<f64> = features.iter().map(|f| cos_dist(f, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest_dist.iter().sum();
        let pick = if total < 1e-18 {
            // All remaining mass on already-chosen points; fall back to uniform.
            rng.random_range(0..n)
        } else {
            WeightedIndex::new(nearest_dist.iter().cloned())
                .expect("non-negative weights with positive total")
                .sample(rng)
        };
        let chosen = features[pick].clone();
        for (d, f) in nearest_dist.iter_mut().zip(features) {
            *d = d.min(cos_dist(f, &chosen));
        }
        centroids.push(chosen);
    }
    centroids
}

/// Greedy capacity-constrained assignment: fill each cluster to exactly
/// `cluster_size`, then spread the `n mod cluster_size` leftovers across
/// their most similar centroids with at most `ceil(r/K)` extras per cluster.
fn balanced_assignment(
    features: &[UnitVector],
    centroids: &[UnitVector],
    cluster_size: usize,
) -> Vec<Vec<usize>> {
    let n = features.len();
    let k = centroids.len();
    let sims: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            centroids
                .iter()
                .map(|c| dot(f.as_slice(), c.as_slice()))
                .collect()
        })
        .collect();

    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..k).map(move |c| (i, c)))
        .collect();
    pairs.sort_by(|&(i1, c1), &(i2, c2)| {
        sims[i2][c2]
            .total_cmp(&sims[i1][c1])
            .then(i1.cmp(&i2))
            .then(c1.cmp(&c2))
    });

    let mut assigned = vec![usize::MAX; n];
    let mut capacity = vec![cluster_size; k];
    let mut remaining = n.min(k * cluster_size);
    for &(i, c) in &pairs {
        if remaining == 0 {
            break;
        }
        if assigned[i] == usize::MAX && capacity[c] > 0 {
            assigned[i] = c;
            capacity[c] -= 1;
            remaining -= 1;
        }
    }

    // Leftovers beyond the K*l full slots.
    let leftovers: Vec<usize> = (0..n).filter(|&i| assigned[i] == usize::MAX).collect();
    if !leftovers.is_empty() {
        let extra_cap = leftovers.len().div_ceil(k);
        let mut extras = vec![extra_cap; k];
        let mut leftover_pairs: Vec<(usize, usize)> = leftovers
            .iter()
            .flat_map(|&i| (0..k).map(move |c| (i, c)))
            .collect();
        leftover_pairs.sort_by(|&(i1, c1), &(i2, c2)| {
            sims[i2][c2]
                .total_cmp(&sims[i1][c1])
                .then(i1.cmp(&i2))
                .then(c1.cmp(&c2))
        });
        for &(i, c) in &leftover_pairs {
            if assigned[i] == usize::MAX && extras[c] > 0 {
                assigned[i] = c;
                extras[c] -= 1;
            }
        }
    }

    let mut assignments = vec![Vec::new(); k];
    for (i, &c) in assigned.iter().enumerate() {
        assignments[c].push(i);
    }
    assignments
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}
