//! The alternating training loop: softmax warm-up, per-class clustering,
//! batches of hard query clusters with their nearest neighbors, SGD over the
//! configured loss with cost weights, and periodic cluster refreshes, until
//! the validation balanced accuracy plateaus or the round budget runs out.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::classifier::{build_index, RetrievedCluster};
use crate::clustering::{splitmix64, ClusterIndex};
use crate::datagen::Dataset;
use crate::encoder::{
    backward, forward, sgd_step, EncoderConfig, EncoderParams, OptimizerState,
};
use crate::error::{Error, Result};
use crate::hypersphere::UnitVector;
use crate::losses::{
    clmle_loss, lmle_loss, sample_quintuplets, softmax_ce_loss, triplet_loss, ClmleConfig,
    Embeddings, LmleMargins, LossOutput, Triplet,
};
use crate::metrics::balanced_accuracy;
use crate::sampler::{
    retrieve_nearest_clusters, select_query_cluster, subsample_and_weight, update_loss_cache,
    ClassCursor, LossCache, DEFAULT_LOSS_EMA_BETA,
};

/// Which objective drives the embedding updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Clmle,
    Lmle,
    Triplet,
    Softmax,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            LossKind::Clmle => "clmle",
            LossKind::Lmle => "lmle",
            LossKind::Triplet => "triplet",
            LossKind::Softmax => "softmax",
        };
        f.write_str(s)
    }
}

/// Full training configuration. Defaults follow the desk-scale scaling of the
/// reference hyperparameters (cluster size 20 instead of 200, with the
/// per-cluster sample count scaled by the same factor).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    /// Cluster size l.
    pub cluster_size: usize,
    /// Clusters per batch M (query + M-1 retrieved).
    pub clusters_per_batch: usize,
    /// Members sampled per cluster.
    pub samples_per_cluster: usize,
    /// Between-class angular margin.
    pub a1: f64,
    /// Within-class angular margin.
    pub a2: f64,
    pub triplet_margin: f64,
    pub lmle_margins: (f64, f64, f64),
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Iterations between cluster refreshes (one alternation round).
    pub refresh_period: usize,
    pub max_rounds: usize,
    /// Validation cadence in iterations.
    pub eval_every: usize,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub pretrain_batch_size: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Retrieved clusters N for validation/test prediction.
    pub n_retrieve: usize,
    pub plateau_min_delta: f64,
    pub plateau_patience: usize,
    pub lr_drop_factor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Clmle,
            cluster_size: 20,
            clusters_per_batch: 12,
            samples_per_cluster: 2,
            a1: 0.25,
            a2: 0.1,
            triplet_margin: 0.2,
            lmle_margins: (0.1, 0.1, 0.1),
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0005,
            refresh_period: 200,
            max_rounds: 5,
            eval_every: 25,
            pretrain_epochs: 5,
            pretrain_learning_rate: 0.05,
            pretrain_batch_size: 32,
            hidden: vec![64, 64],
            embed_dim: 16,
            n_retrieve: 20,
            plateau_min_delta: 1e-3,
            plateau_patience: 3,
            lr_drop_factor: 10.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ConfigError(msg));
        if self.cluster_size < 1 {
            return bad("cluster_size must be >= 1".into());
        }
        if self.clusters_per_batch < 2 {
            return bad("clusters_per_batch must be >= 2".into());
        }
        if self.samples_per_cluster < 1 {
            return bad("samples_per_cluster must be >= 1".into());
        }
        if self.refresh_period < 1 || self.max_rounds < 1 || self.eval_every < 1 {
            return bad("refresh_period, max_rounds, eval_every must be >= 1".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative".into());
        }
        if self.embed_dim < 2 {
            return bad("embed_dim must be >= 2".into());
        }
        if self.n_retrieve < 1 {
            return bad("n_retrieve must be >= 1".into());
        }
        if !(self.lr_drop_factor > 1.0) {
            return bad("lr_drop_factor must exceed 1".into());
        }
        match self.loss {
            LossKind::Clmle => {
                ClmleConfig::new(self.a1, self.a2)?;
            }
            LossKind::Lmle => {
                let (g1, g2, g3) = self.lmle_margins;
                LmleMargins::new(g1, g2, g3)?;
            }
            LossKind::Triplet => {
                if !(self.triplet_margin > 0.0) {
                    return bad("triplet_margin must be positive".into());
                }
            }
            LossKind::Softmax => {}
        }
        Ok(())
    }
}

/// One loss-curve entry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub loss: f64,
    pub seen_samples: u64,
}

/// One validation-curve entry.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iteration: usize,
    pub seen_samples: u64,
    pub balanced_accuracy: f64,
}

/// Per-alternation-round bookkeeping.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub end_iteration: usize,
    pub wall_clock_secs: f64,
    pub val_balanced_accuracy: f64,
}

/// Everything a training run reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss: LossKind,
    pub loss_curve: Vec<IterationRecord>,
    pub val_curve: Vec<ValidationRecord>,
    pub rounds: Vec<RoundRecord>,
    pub final_val_balanced_accuracy: f64,
    pub seen_samples: u64,
    pub clustering_passes: usize,
    /// Set by callers that persist the encoder.
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// Seen-sample count at the first validation record reaching `target`.
    pub fn seen_samples_to_reach(&self, target: f64) -> Option<u64> {
        self.val_curve
            .iter()
            .find(|r| r.balanced_accuracy >= target)
            .map(|r| r.seen_samples)
    }

    /// Writes `iteration,loss,seen_samples` rows.
    pub fn save_loss_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["iteration", "loss", "seen_samples"])?;
        for r in &self.loss_curve {
            writer.write_record([
                r.iteration.to_string(),
                format!("{}", r.loss),
                r.seen_samples.to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }
}

/// A finished training run.
#[derive(Debug)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub encoder: EncoderParams,
    pub clusters: ClusterIndex,
}

/// Softmax warm-up output: the encoder that seeds the first clustering pass,
/// its classifier head, and the samples consumed.
#[derive(Debug)]
pub struct PretrainOutcome {
    pub params: EncoderParams,
    pub class_weights: Vec<Vec<f64>>,
    pub seen_samples: u64,
}

/// Train/validation ids, carving a stratified 10% validation slice out of the
/// training split when the dataset does not provide one.
fn resolve_splits(dataset: &Dataset, seed: u64) -> (Vec<usize>, Vec<usize>) {
    if !dataset.split.val.is_empty() {
        return (dataset.split.train.clone(), dataset.split.val.clone());
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &id in &dataset.split.train {
        by_class.entry(dataset.labels[id]).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x7a1));
    let mut train = Vec::new();
    let mut val = Vec::new();
    for ids in by_class.values() {
        let mut ids = ids.clone();
        ids.shuffle(&mut rng);
        let n_val = (ids.len() / 10).min(ids.len().saturating_sub(1));
        val.extend(&ids[..n_val]);
        train.extend(&ids[n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Embeds the given sample ids with the current encoder.
pub fn embed_ids(
    params: &EncoderParams,
    dataset: &Dataset,
    ids: &[usize],
) -> Result<BTreeMap<usize, UnitVector>> {
    let inputs: Vec<Vec<f64>> = ids.iter().map(|&id| dataset.features[id].clone()).collect();
    let (units, _) = forward(params, &inputs)?;
    Ok(ids.iter().copied().zip(units).collect())
}

/// Evaluation of a trained encoder + cluster index on a sample-id slice.
#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub balanced_accuracy: f64,
    pub retrieved: Vec<Vec<RetrievedCluster>>,
}

/// Predicts each id with the k-nearest-cluster rule and scores balanced
/// accuracy against the dataset labels.
pub fn evaluate(
    params: &EncoderParams,
    index: &ClusterIndex,
    dataset: &Dataset,
    ids: &[usize],
    n_retrieve: usize,
) -> Result<EvalOutcome> {
    let search = build_index(index, n_retrieve)?;
    let embedded = embed_ids(params, dataset, ids)?;
    let mut predictions = Vec::with_capacity(ids.len());
    let mut labels = Vec::with_capacity(ids.len());
    let mut retrieved_all = Vec::with_capacity(ids.len());
    for &id in ids {
        let retrieved = search.knn_clusters(&embedded[&id]);
        predictions.push(crate::classifier::predict_from_retrieved(&retrieved)?);
        labels.push(dataset.labels[id]);
        retrieved_all.push(retrieved);
    }
    let balanced = balanced_accuracy(&predictions, &labels)?;
    Ok(EvalOutcome {
        predictions,
        labels,
        balanced_accuracy: balanced,
        retrieved: retrieved_all,
    })
}

/// Classifies inputs with the pretrain softmax head (argmax of `W^T f(x)`).
pub fn classify_softmax(
    params: &EncoderParams,
    class_weights: &[Vec<f64>],
    dataset: &Dataset,
    ids: &[usize],
) -> Result<Vec<usize>> {
    let embedded = embed_ids(params, dataset, ids)?;
    let classes = class_weights.first().map(Vec::len).unwrap_or(0);
    Ok(ids
        .iter()
        .map(|id| {
            let f = embedded[id].as_slice();
            (0..classes)
                .map(|c| {
                    f.iter()
                        .zip(class_weights)
                        .map(|(x, row)| x * row[c])
                        .sum::<f64>()
                })
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(c, _)| c)
                .unwrap_or(0)
        })
        .collect())
}

/// Momentum state for the softmax classifier head.
struct HeadState {
    weights: Vec<Vec<f64>>,
    velocity: Vec<Vec<f64>>,
}

impl HeadState {
    fn init(dim: usize, classes: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = 1.0 / (dim as f64).sqrt();
        let weights = (0..dim)
            .map(|_| {
                (0..classes)
                    .map(|_| {
                        let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect()
            })
            .collect();
        Self {
            weights,
            velocity: vec![vec![0.0; classes]; dim],
        }
    }

    fn step(&mut self, grads: &[Vec<f64>], opt: &OptimizerState) -> Result<()> {
        for (j, row) in grads.iter().enumerate() {
            for (c, &g) in row.iter().enumerate() {
                if !g.is_finite() {
                    return Err(Error::NonFiniteGradient);
                }
                let v = &mut self.velocity[j][c];
                let w = &mut self.weights[j][c];
                *v = opt.momentum * *v + g + opt.weight_decay * *w;
                *w -= opt.learning_rate * *v;
            }
        }
        Ok(())
    }
}

/// Cross-entropy warm-up over uniformly shuffled batches; its embeddings seed
/// the first clustering pass. Prior feature quality is not critical, so the
/// budget stays small.
pub fn pretrain_softmax(
    dataset: &Dataset,
    epochs: usize,
    config: &TrainConfig,
) -> Result<PretrainOutcome> {
    let (train_ids, _) = resolve_splits(dataset, config.seed);
    if train_ids.is_empty() {
        return Err(Error::EmptyInput);
    }
    let num_classes = dataset.num_classes();
    if num_classes < 2 {
        return Err(Error::ConfigError("at least 2 classes required".into()));
    }
    let enc_config = EncoderConfig::new(
        dataset.feature_dim(),
        config.hidden.clone(),
        config.embed_dim,
    );
    let mut params = EncoderParams::init(&enc_config, splitmix64(config.seed ^ 0x01));
    let mut head = HeadState::init(
        config.embed_dim,
        num_classes,
        splitmix64(config.seed ^ 0x02),
    );
    let mut opt = OptimizerState::new(
        &params,
        config.pretrain_learning_rate,
        config.momentum,
        config.weight_decay,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x03));
    let mut seen = 0u64;

    for _ in 0..epochs {
        let mut order = train_ids.clone();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.pretrain_batch_size.max(1)) {
            let inputs: Vec<Vec<f64>> =
                chunk.iter().map(|&id| dataset.features[id].clone()).collect();
            let (units, cache) = forward(&params, &inputs)?;
            let embeddings: Embeddings = chunk
                .iter()
                .zip(&units)
                .map(|(&id, u)| (id, u.as_slice().to_vec()))
                .collect();
            let labels: BTreeMap<usize, usize> =
                chunk.iter().map(|&id| (id, dataset.labels[id])).collect();
            let loss = softmax_ce_loss(&embeddings, &labels, &head.weights)?;
            if !loss.output.value.is_finite() {
                return Err(Error::DivergenceDetected { iteration: 0 });
            }
            let out_grads: Vec<Vec<f64>> = chunk
                .iter()
                .map(|id| loss.output.grads[id].clone())
                .collect();
            let pgrads = backward(&params, &cache, &out_grads)?;
            sgd_step(&mut params, &mut opt, &pgrads)
                .map_err(|_| Error::DivergenceDetected { iteration: 0 })?;
            head.step(&loss.weight_grads, &opt)
                .map_err(|_| Error::DivergenceDetected { iteration: 0 })?;
            seen += chunk.len() as u64;
        }
    }
    Ok(PretrainOutcome {
        params,
        class_weights: head.weights,
        seen_samples: seen,
    })
}

/// Runs the full alternating procedure and returns the report, the trained
/// encoder, and the final cluster index (refreshed on the final embeddings).
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if dataset.num_classes() < 2 {
        return Err(Error::ConfigError("dataset needs at least 2 classes".into()));
    }
    let (train_ids, val_ids) = resolve_splits(dataset, config.seed);
    if train_ids.is_empty() || val_ids.is_empty() {
        return Err(Error::ConfigError(
            "dataset must provide non-empty train and validation splits".into(),
        ));
    }
    let train_labels: BTreeMap<usize, usize> = train_ids
        .iter()
        .map(|&id| (id, dataset.labels[id]))
        .collect();

    // Step 1 warm-up: clustering needs prior features.
    let warmup = pretrain_softmax(dataset, config.pretrain_epochs, config)?;
    let mut params = warmup.params;
    let mut seen = warmup.seen_samples;

    let embeddings = embed_ids(&params, dataset, &train_ids)?;
    let mut index = ClusterIndex::build(
        &embeddings,
        &train_labels,
        config.cluster_size,
        50,
        config.seed,
    )?;
    let mut clustering_passes = 1usize;

    let mut cache = LossCache::new(DEFAULT_LOSS_EMA_BETA);
    let mut cursor = ClassCursor::new(&index)?;
    let mut opt = OptimizerState::new(
        &params,
        config.learning_rate,
        config.momentum,
        config.weight_decay,
    )?;
    let mut head = HeadState::init(
        config.embed_dim,
        dataset.num_classes(),
        splitmix64(config.seed ^ 0x04),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x05));

    let mut report = TrainReport {
        loss: config.loss,
        loss_curve: Vec::new(),
        val_curve: Vec::new(),
        rounds: Vec::new(),
        final_val_balanced_accuracy: 0.0,
        seen_samples: 0,
        clustering_passes,
        checkpoint: None,
    };

    let mut iteration = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut stale_evals = 0usize;
    let mut lr_drops = 0usize;
    let mut stop_training = false;

    let n_eval = config.n_retrieve;

    'rounds: for round in 0..config.max_rounds {
        let round_start = Instant::now();
        let mut round_ended_early = false;

        for _ in 0..config.refresh_period {
            iteration += 1;

            // Steps 2-3: query cluster, nearest clusters, member subsampling.
            let query = select_query_cluster(&index, &cache, &mut cursor)?;
            let retrieved =
                retrieve_nearest_clusters(&index, query, config.clusters_per_batch - 1)?;
            let mut cluster_ids = vec![query];
            cluster_ids.extend(retrieved);
            let batch = subsample_and_weight(
                &index,
                &cluster_ids,
                config.samples_per_cluster,
                rng.random::<u64>(),
            )?;
            let ids = batch.sample_ids();

            // Step 4: forward, loss, backward, update.
            let inputs: Vec<Vec<f64>> =
                ids.iter().map(|&id| dataset.features[id].clone()).collect();
            let (units, fcache) = forward(&params, &inputs)?;
            let embeddings: Embeddings = ids
                .iter()
                .zip(&units)
                .map(|(&id, u)| (id, u.as_slice().to_vec()))
                .collect();

            let (loss_out, head_grads) =
                compute_batch_loss(config, &batch, &index, &embeddings, &head, &mut rng)?;
            if !loss_out.value.is_finite() {
                return Err(Error::DivergenceDetected { iteration });
            }

            let out_grads: Vec<Vec<f64>> =
                ids.iter().map(|id| loss_out.grads[id].clone()).collect();
            let pgrads = backward(&params, &fcache, &out_grads)?;
            sgd_step(&mut params, &mut opt, &pgrads)
                .map_err(|_| Error::DivergenceDetected { iteration })?;
            if let Some(grads) = head_grads {
                head.step(&grads, &opt)
                    .map_err(|_| Error::DivergenceDetected { iteration })?;
            }

            update_loss_cache(&mut cache, &loss_out.per_sample, &batch);
            seen += batch.size() as u64;
            report.loss_curve.push(IterationRecord {
                iteration,
                loss: loss_out.value,
                seen_samples: seen,
            });

            if iteration % config.eval_every == 0 {
                let val = evaluate(&params, &index, dataset, &val_ids, n_eval)?;
                report.val_curve.push(ValidationRecord {
                    iteration,
                    seen_samples: seen,
                    balanced_accuracy: val.balanced_accuracy,
                });
                if val.balanced_accuracy > best_val + config.plateau_min_delta {
                    best_val = val.balanced_accuracy;
                    stale_evals = 0;
                } else {
                    stale_evals += 1;
                    if stale_evals >= config.plateau_patience {
                        // Plateau: drop the learning rate and end the round.
                        opt.learning_rate /= config.lr_drop_factor;
                        lr_drops += 1;
                        stale_evals = 0;
                        round_ended_early = true;
                        if lr_drops >= 2 {
                            stop_training = true;
                        }
                        break;
                    }
                }
            }
        }

        // Step 5: refresh clusters on the latest features.
        let all_embeddings = embed_ids(&params, dataset, &train_ids)?;
        index = index.refresh_all(&all_embeddings)?;
        cache.reseed(&index);
        clustering_passes += 1;

        let val = evaluate(&params, &index, dataset, &val_ids, n_eval)?;
        report.val_curve.push(ValidationRecord {
            iteration,
            seen_samples: seen,
            balanced_accuracy: val.balanced_accuracy,
        });
        report.rounds.push(RoundRecord {
            round,
            end_iteration: iteration,
            wall_clock_secs: round_start.elapsed().as_secs_f64(),
            val_balanced_accuracy: val.balanced_accuracy,
        });
        report.final_val_balanced_accuracy = val.balanced_accuracy;

        if stop_training {
            break 'rounds;
        }
        let _ = round_ended_early;
    }

    report.seen_samples = seen;
    report.clustering_passes = clustering_passes;
    Ok(TrainOutcome {
        report,
        encoder: params,
        clusters: index,
    })
}

/// Dispatches the configured loss over one batch. Returns the loss output and,
/// for the softmax baseline, the classifier-head gradients.
fn compute_batch_loss(
    config: &TrainConfig,
    batch: &crate::sampler::MiniBatch,
    index: &ClusterIndex,
    embeddings: &Embeddings,
    head: &HeadState,
    rng: &mut ChaCha8Rng,
) -> Result<(LossOutput, Option<Vec<Vec<f64>>>)> {
    let clusters = batch.batch_clusters(index);
    match config.loss {
        LossKind::Clmle => {
            let cfg = ClmleConfig::new(config.a1, config.a2)?
                .with_weights(batch.cost_weights.clone())?;
            Ok((clmle_loss(embeddings, &clusters, &cfg)?, None))
        }
        LossKind::Lmle => {
            let anchors = batch.sample_ids();
            let quintuplets = sample_quintuplets(&clusters, embeddings, &anchors);
            if quintuplets.is_empty() {
                // No anchor had enough structure in this batch; no update.
                let mut out = LossOutput {
                    value: 0.0,
                    grads: BTreeMap::new(),
                    per_sample: BTreeMap::new(),
                };
                for (&id, v) in embeddings {
                    out.grads.insert(id, vec![0.0; v.len()]);
                    out.per_sample.insert(id, 0.0);
                }
                return Ok((out, None));
            }
            let (g1, g2, g3) = config.lmle_margins;
            let margins = LmleMargins::new(g1, g2, g3)?;
            Ok((lmle_loss(embeddings, &quintuplets, margins, &clusters)?, None))
        }
        LossKind::Triplet => {
            let triplets = draw_triplets(batch, rng);
            if triplets.is_empty() {
                let mut out = LossOutput {
                    value: 0.0,
                    grads: BTreeMap::new(),
                    per_sample: BTreeMap::new(),
                };
                for (&id, v) in embeddings {
                    out.grads.insert(id, vec![0.0; v.len()]);
                    out.per_sample.insert(id, 0.0);
                }
                return Ok((out, None));
            }
            Ok((
                triplet_loss(embeddings, &triplets, config.triplet_margin)?,
                None,
            ))
        }
        LossKind::Softmax => {
            let loss = softmax_ce_loss(embeddings, &batch.labels, &head.weights)?;
            Ok((loss.output, Some(loss.weight_grads)))
        }
    }
}

/// Plain triplets from the batch: every member anchors one triplet with a
/// uniformly drawn same-class positive and different-class negative.
fn draw_triplets(batch: &crate::sampler::MiniBatch, rng: &mut ChaCha8Rng) -> Vec<Triplet> {
    let ids = batch.sample_ids();
    let mut triplets = Vec::new();
    for &anchor in &ids {
        let class = batch.labels[&anchor];
        let positives: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&id| id != anchor && batch.labels[&id] == class)
            .collect();
        let negatives: Vec<usize> = ids
            .iter()
            .copied()
            .filter(|&id| batch.labels[&id] != class)
            .collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        triplets.push(Triplet {
            anchor,
            positive: positives[rng.random_range(0..positives.len())],
            negative: negatives[rng.random_range(0..negatives.len())],
        });
    }
    triplets
}
