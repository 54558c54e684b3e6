//! k-nearest-cluster inference: retrieve the N most similar centroids and
//! pick the class whose least similar retrieved cluster beats the other
//! classes' clusters by the largest margin. The centroid search runs on a
//! KD-tree, which is exact because squared Euclidean distance on unit vectors
//! is an order-reversing bijection of inner-product similarity.

use std::collections::BTreeMap;
use std::path::Path;

use crate::clustering::ClusterIndex;
use crate::error::{Error, Result};
use crate::hypersphere::{cos_sim, dot, UnitVector};
use crate::kdtree::KdTree;
use crate::losses::log_sum_exp;

/// One retrieved cluster with its similarity to the query.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedCluster {
    pub cluster_id: usize,
    pub class: usize,
    pub similarity: f64,
}

/// Immutable search index over all classes' centroids.
#[derive(Debug)]
pub struct ClusterSearchIndex {
    tree: KdTree,
    /// (cluster id, class) per tree point, in tree point-id order.
    meta: Vec<(usize, usize)>,
    centroids: Vec<Vec<f64>>,
    n_retrieve: usize,
}

/// Builds the index over every centroid of `index`; `n_retrieve` is capped at
/// the total centroid count.
pub fn build_index(index: &ClusterIndex, n_retrieve: usize) -> Result<ClusterSearchIndex> {
    if index.is_empty() {
        return Err(Error::EmptyIndex);
    }
    if n_retrieve == 0 {
        return Err(Error::ConfigError("n_retrieve must be at least 1".into()));
    }
    let mut meta = Vec::with_capacity(index.len());
    let mut centroids = Vec::with_capacity(index.len());
    for cluster in index.clusters() {
        meta.push((cluster.id, cluster.class));
        centroids.push(cluster.centroid.as_slice().to_vec());
    }
    let tree = KdTree::build(centroids.clone())?;
    Ok(ClusterSearchIndex {
        tree,
        meta,
        centroids,
        n_retrieve: n_retrieve.min(index.len()),
    })
}

impl ClusterSearchIndex {
    pub fn n_retrieve(&self) -> usize {
        self.n_retrieve
    }

    pub fn centroid_count(&self) -> usize {
        self.meta.len()
    }

    /// The N nearest clusters by inner product, descending; similarity ties
    /// break toward the lowest cluster id.
    pub fn knn_clusters(&self, query: &UnitVector) -> Vec<RetrievedCluster> {
        self.knn_clusters_with_stats(query).0
    }

    /// Like [`Self::knn_clusters`], also returning the number of similarity
    /// evaluations the tree performed.
    pub fn knn_clusters_with_stats(&self, query: &UnitVector) -> (Vec<RetrievedCluster>, usize) {
        let (hits, evals) = self
            .tree
            .nearest_with_stats(query.as_slice(), self.n_retrieve);
        let mut retrieved: Vec<RetrievedCluster> = hits
            .into_iter()
            .map(|(point, _)| {
                let (cluster_id, class) = self.meta[point];
                RetrievedCluster {
                    cluster_id,
                    class,
                    similarity: dot(query.as_slice(), &self.centroids[point]),
                }
            })
            .collect();
        retrieved.sort_by(|a, b| {
            b.similarity
                .total_cmp(&a.similarity)
                .then(a.cluster_id.cmp(&b.cluster_id))
        });
        (retrieved, evals)
    }

    /// Classifies the query per the retrieved-cluster decision rule.
    pub fn predict(&self, query: &UnitVector) -> Result<usize> {
        predict_from_retrieved(&self.knn_clusters(query))
    }
}

/// Decision rule restricted to an already-retrieved set: pick the class `c`
/// maximizing `min_{m in c} sim_m - lse_{k not in c} sim_k` (the log of the
/// published score ratio). A single retrieved class wins outright; score ties
/// break toward the lowest class id.
pub fn predict_from_retrieved(retrieved: &[RetrievedCluster]) -> Result<usize> {
    if retrieved.is_empty() {
        return Err(Error::EmptyRetrieval);
    }
    let mut class_min: BTreeMap<usize, f64> = BTreeMap::new();
    for r in retrieved {
        class_min
            .entry(r.class)
            .and_modify(|m| *m = m.min(r.similarity))
            .or_insert(r.similarity);
    }
    if class_min.len() == 1 {
        return Ok(*class_min.keys().next().expect("non-empty"));
    }
    let mut best: Option<(f64, usize)> = None;
    for (&class, &min_sim) in &class_min {
        let others = retrieved.iter().filter(|r| r.class != class);
        let denom = log_sum_exp(others.map(|r| r.similarity));
        let score = min_sim - denom;
        let better = match best {
            None => true,
            Some((bs, _)) => score > bs,
        };
        if better {
            best = Some((score, class));
        }
    }
    Ok(best.expect("at least two classes").1)
}

/// Searches the retrieval count N over the grid {20, 30, ..., 200} capped at
/// the centroid count, maximizing validation balanced accuracy; ties take the
/// smallest N.
pub fn tune_n(
    index: &ClusterIndex,
    validation: &[(UnitVector, usize)],
) -> Result<usize> {
    let centroid_count = index.len();
    if centroid_count == 0 {
        return Err(Error::EmptyIndex);
    }
    let grid: Vec<usize> = if centroid_count < 20 {
        vec![centroid_count]
    } else {
        (20..=200.min(centroid_count)).step_by(10).collect()
    };
    let max_n = *grid.last().expect("non-empty grid");
    let search = build_index(index, max_n)?;

    // Retrieve once at the largest N; each smaller N is a prefix.
    let retrievals: Vec<Vec<RetrievedCluster>> = validation
        .iter()
        .map(|(q, _)| search.knn_clusters(q))
        .collect();

    let mut best: Option<(f64, usize)> = None;
    for &n in &grid {
        let mut predictions = Vec::with_capacity(validation.len());
        let mut labels = Vec::with_capacity(validation.len());
        for (retrieved, (_, label)) in retrievals.iter().zip(validation) {
            let prefix = &retrieved[..n.min(retrieved.len())];
            predictions.push(predict_from_retrieved(prefix)?);
            labels.push(*label);
        }
        let accuracy = crate::metrics::balanced_accuracy(&predictions, &labels)?;
        let better = match best {
            None => true,
            Some((ba, _)) => accuracy > ba,
        };
        if better {
            best = Some((accuracy, n));
        }
    }
    Ok(best.expect("non-empty grid").1)
}

/// Same-identity decision for a pair of embeddings: same iff the inner
/// product reaches the threshold.
pub fn pairwise_verify(a: &UnitVector, b: &UnitVector, threshold: f64) -> Result<bool> {
    Ok(cos_sim(a, b)? >= threshold)
}

/// Writes predictions as CSV rows
/// `id,predicted,cluster_0,sim_0,...,cluster_{N-1},sim_{N-1}`.
pub fn export_predictions_csv(
    path: &Path,
    rows: impl Iterator<Item = (usize, usize, Vec<RetrievedCluster>)>,
) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header_written = false;
    for (id, predicted, retrieved) in rows {
        if !header_written {
            let mut header = vec!["id".to_string(), "predicted".to_string()];
            for j in 0..retrieved.len() {
                header.push(format!("cluster_{j}"));
                header.push(format!("sim_{j}"));
            }
            writer.write_record(&header)?;
            header_written = true;
        }
        let mut record = vec![id.to_string(), predicted.to_string()];
        for r in &retrieved {
            record.push(r.cluster_id.to_string());
            record.push(format!("{}", r.similarity));
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
