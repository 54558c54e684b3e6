//! Exact k-nearest-neighbor search over low-dimensional points.
//!
//! The tree is an accelerator, never an approximation: queries return exactly
//! the brute-force ranking by (squared distance, point id). Distance
//! evaluations are counted so the speedup over exhaustive scan is measurable.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::hypersphere::squared_distance;

const LEAF_SIZE: usize = 16;

#[derive(Debug)]
enum Node {
    Leaf {
        point_ids: Vec<usize>,
    },
    Split {
        dim: usize,
        value: f64,
        left: usize,
        right: usize,
    },
}

/// A static KD-tree over owned points.
#[derive(Debug)]
pub struct KdTree {
    points: Vec<Vec<f64>>,
    nodes: Vec<Node>,
    root: usize,
    dim: usize,
}

/// Max-heap entry ordered by (squared distance, point id); the heap top is
/// the current worst candidate.
#[derive(PartialEq)]
struct Candidate {
    dist: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist
            .total_cmp(&other.dist)
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl KdTree {
    pub fn build(points: Vec<Vec<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyIndex);
        }
        let dim = points[0].len();
        if let Some(bad) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: bad.len(),
            });
        }
        let mut tree = Self {
            points,
            nodes: Vec::new(),
            root: 0,
            dim,
        };
        let mut ids: Vec<usize> = (0..tree.points.len()).collect();
        tree.root = tree.build_node(&mut ids);
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn build_node(&mut self, ids: &mut [usize]) -> usize {
        if ids.len() <= LEAF_SIZE {
            self.nodes.push(Node::Leaf {
                point_ids: ids.to_vec(),
            });
            return self.nodes.len() - 1;
        }

        // Split along the dimension with the widest spread, at the median.
        let split_dim = (0..self.dim)
            .max_by(|&a, &b| {
                let spread = |d: usize| {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for &id in ids.iter() {
                        let v = self.points[id][d];
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    hi - lo
                };
                spread(a).total_cmp(&spread(b))
            })
            .unwrap_or(0);
        let mid = ids.len() / 2;
        ids.select_nth_unstable_by(mid, |&a, &b| {
            self.points[a][split_dim]
                .total_cmp(&self.points[b][split_dim])
                .then(a.cmp(&b))
        });
        let split_value = self.points[ids[mid]][split_dim];

        let (left_ids, right_ids) = ids.split_at_mut(mid);
        let left = self.build_node(left_ids);
        let right = self.build_node(right_ids);
        self.nodes.push(Node::Split {
            dim: split_dim,
            value: split_value,
            left,
            right,
        });
        self.nodes.len() - 1
    }

    /// The `k` nearest points by (squared distance, id), ascending.
    pub fn nearest(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        self.nearest_with_stats(query, k).0
    }

    /// Like [`Self::nearest`], also returning the number of point-distance
    /// evaluations performed.
    pub fn nearest_with_stats(&self, query: &[f64], k: usize) -> (Vec<(usize, f64)>, usize) {
        let k = k.min(self.points.len());
        if k == 0 {
            return (Vec::new(), 0);
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(k + 1);
        let mut evals = 0usize;
        self.search(self.root, query, k, &mut heap, &mut evals);
        // into_sorted_vec yields ascending (dist, id) order.
        let results: Vec<(usize, f64)> =
            heap.into_sorted_vec().into_iter().map(|c| (c.id, c.dist)).collect();
        (results, evals)
    }

    fn search(
        &self,
        node: usize,
        query: &[f64],
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
        evals: &mut usize,
    ) {
        match &self.nodes[node] {
            Node::Leaf { point_ids } => {
                for &id in point_ids {
                    let dist = squared_distance(query, &self.points[id]);
                    *evals += 1;
                    let candidate = Candidate { dist, id };
                    if heap.len() < k {
                        heap.push(candidate);
                    } else if let Some(worst) = heap.peek() {
                        if candidate < *worst {
                            heap.pop();
                            heap.push(candidate);
                        }
                    }
                }
            }
            Node::Split {
                dim,
                value,
                left,
                right,
            } => {
                let delta = query[*dim] - value;
                let (near, far) = if delta < 0.0 {
                    (*left, *right)
                } else {
                    (*right, *left)
                };
                self.search(near, query, k, heap, evals);
                // Visit the far side unless the splitting plane is strictly
                // farther than the worst candidate: on exact ties a point with
                // a lower id could still displace the worst.
                let plane_dist = delta * delta;
                let must_visit = heap.len() < k
                    || heap.peek().map(|w| plane_dist <= w.dist).unwrap_or(true);
                if must_visit {
                    self.search(far, query, k, heap, evals);
                }
            }
        }
    }
}
