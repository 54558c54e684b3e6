//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by clustering, loss, training, and evaluation operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Input vector has (near-)zero norm and cannot be placed on the hypersphere.
    #[error("zero vector: norm {norm:.3e} is below 1e-12")]
    ZeroVector { norm: f64 },
    /// Two vectors that must share a dimension do not.
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    /// Class/sample counts violate the margin-bound preconditions.
    #[error("invalid counts: classes={classes}, class_size={class_size}, total={total}")]
    InvalidCounts {
        classes: usize,
        class_size: usize,
        total: usize,
    },
    /// Clustering was asked to partition an empty feature set.
    #[error("empty input: no features to cluster")]
    EmptyInput,
    /// A cluster's member mean is (near-)zero, so no unit centroid exists.
    #[error("degenerate centroid: member mean norm {norm:.3e} is below 1e-12")]
    DegenerateCentroid { norm: f64 },
    /// Triplet loss received no triplets.
    #[error("empty triplet set")]
    EmptyTripletSet,
    /// Quintuplet loss received no quintuplets.
    #[error("empty quintuplet set")]
    EmptyQuintupletSet,
    /// A quintuplet's roles violate the class/cluster membership invariants.
    #[error("quintuplet role violation: {0}")]
    RoleViolation(String),
    /// A quintuplet role cannot be filled for this anchor (e.g. single-cluster class).
    #[error("insufficient structure for anchor {anchor}: {role} cannot be filled")]
    InsufficientStructure { anchor: usize, role: &'static str },
    /// The batch holds fewer than two clusters, so no competing centroid exists.
    #[error("batch holds {0} cluster(s); at least 2 required")]
    SingleClusterBatch(usize),
    /// A cost weight is zero or negative.
    #[error("non-positive cost weight {weight} for sample {sample}")]
    NonPositiveWeight { sample: usize, weight: f64 },
    /// A class label falls outside the score matrix's columns.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    /// Tensor shapes disagree between forward cache and backward input.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A gradient contains NaN or infinity; the training run must abort.
    #[error("non-finite gradient encountered")]
    NonFiniteGradient,
    /// An index operation was attempted on an empty cluster set.
    #[error("empty cluster index")]
    EmptyIndex,
    /// Retrieval needs more clusters than the index holds.
    #[error("too few clusters: requested {requested}, index holds {available}")]
    TooFewClusters { requested: usize, available: usize },
    /// Prediction was attempted with an empty retrieved set.
    #[error("empty retrieval")]
    EmptyRetrieval,
    /// A synthetic-data spec violates its own invariants.
    #[error("invalid synthetic spec: {0}")]
    SpecError(String),
    /// A metric received a class with no samples.
    #[error("empty class in labels")]
    EmptyClass,
    /// ROC computation needs at least one positive and one negative pair.
    #[error("degenerate pairs: positives={positives}, negatives={negatives}")]
    DegeneratePairs { positives: usize, negatives: usize },
    /// Imbalance level is defined for binary (0/1) labels only.
    #[error("labels are not binary: saw label {0}")]
    NotBinary(usize),
    /// Training produced a non-finite loss.
    #[error("divergence detected at iteration {iteration}: loss is not finite")]
    DivergenceDetected { iteration: usize },
    /// A run configuration is invalid.
    #[error("invalid configuration: {0}")]
    ConfigError(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
