//! Cluster-based large-margin local embeddings (CLMLE) for learning
//! discriminative features from class-imbalanced data.
//!
//! The pipeline: a small encoder maps raw features onto the unit hypersphere;
//! balanced spherical k-means maintains equal-size clusters per class; an
//! angular-margin loss separates cluster distributions both within and
//! between classes; mini-batches pair a hard query cluster with its nearest
//! clusters under cost-sensitive weights; inference uses a k-nearest-cluster
//! rule accelerated by an exact KD-tree. Softmax cross-entropy, triplet, and
//! quintuplet-ordering losses are included as baselines.

pub mod classifier;
pub mod clustering;
pub mod datagen;
pub mod encoder;
pub mod error;
pub mod hypersphere;
pub mod kdtree;
pub mod losses;
pub mod metrics;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};
