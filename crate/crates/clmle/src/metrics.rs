//! Evaluation metrics: balanced (mean per-class) accuracy, ROC with TAR at
//! fixed FAR, rank-1 identification, and the binary imbalance level.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypersphere::dot;

/// Mean of per-class recalls. For binary tasks this equals
/// `0.5 (t_p/N_p + t_n/N_n)`; with equal class sizes it equals plain accuracy.
pub fn balanced_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyClass);
    }
    let mut totals: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&pred, &label) in predictions.iter().zip(labels) {
        let entry = totals.entry(label).or_insert((0, 0));
        entry.0 += 1;
        if pred == label {
            entry.1 += 1;
        }
    }
    let recall_sum: f64 = totals
        .values()
        .map(|&(count, correct)| correct as f64 / count as f64)
        .sum();
    Ok(recall_sum / totals.len() as f64)
}

/// Fraction of exactly-correct predictions.
pub fn overall_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyClass);
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

/// Confusion matrix with rows = true class, columns = predicted class,
/// over classes `0..num_classes`.
pub fn confusion_matrix(
    predictions: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<usize>>> {
    if predictions.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    let mut matrix = vec![vec![0usize; num_classes]; num_classes];
    for (&pred, &label) in predictions.iter().zip(labels) {
        if label >= num_classes || pred >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: label.max(pred),
                classes: num_classes,
            });
        }
        matrix[label][pred] += 1;
    }
    Ok(matrix)
}

/// One point of the ROC step curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub far: f64,
    pub tar: f64,
    pub threshold: f64,
}

/// TAR achieved at a requested FAR budget, with the threshold that attains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TarAtFar {
    pub far_target: f64,
    pub tar: f64,
    pub threshold: f64,
}

/// ROC curve plus TAR at the requested FAR targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocOutput {
    pub points: Vec<RocPoint>,
    pub tar_at_far: Vec<TarAtFar>,
}

/// Sweeps every unique score as an accept threshold (`accept iff score >=
/// threshold`) over labeled pairs and reports, per FAR target, the maximal
/// TAR whose empirical FAR stays within the budget.
pub fn roc_tar_far(pairs: &[(f64, bool)], far_targets: &[f64]) -> Result<RocOutput> {
    let positives = pairs.iter().filter(|(_, same)| *same).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegeneratePairs {
            positives,
            negatives,
        });
    }

    // Descending unique thresholds; start above the maximum so the curve
    // includes (0, 0).
    let mut thresholds: Vec<f64> = pairs.iter().map(|(s, _)| *s).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();

    let mut sorted: Vec<(f64, bool)> = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        far: 0.0,
        tar: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut cursor = 0usize;
    for &threshold in &thresholds {
        while cursor < sorted.len() && sorted[cursor].0 >= threshold {
            if sorted[cursor].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            cursor += 1;
        }
        points.push(RocPoint {
            far: fp as f64 / negatives as f64,
            tar: tp as f64 / positives as f64,
            threshold,
        });
    }

    let tar_at_far = far_targets
        .iter()
        .map(|&target| {
            // Maximal TAR with FAR within budget; the curve is monotone so
            // this is the last point satisfying the constraint.
            let best = points
                .iter()
                .filter(|p| p.far <= target)
                .last()
                .expect("the (0,0) point always satisfies far <= target for target >= 0");
            TarAtFar {
                far_target: target,
                tar: best.tar,
                threshold: best.threshold,
            }
        })
        .collect();

    Ok(RocOutput { points, tar_at_far })
}

/// Fraction of probes whose most similar gallery embedding (ties toward the
/// lowest gallery id) shares the probe's label.
pub fn rank1_identification(
    probes: &[(Vec<f64>, usize)],
    gallery: &[(Vec<f64>, usize)],
) -> Result<f64> {
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::EmptyClass);
    }
    let mut hits = 0usize;
    for (probe, label) in probes {
        let mut best: Option<(f64, usize)> = None;
        for (id, (item, _)) in gallery.iter().enumerate() {
            let sim = dot(probe, item);
            let better = match best {
                None => true,
                Some((bs, _)) => sim > bs,
            };
            if better {
                best = Some((sim, id));
            }
        }
        let (_, best_id) = best.expect("non-empty gallery");
        if gallery[best_id].1 == *label {
            hits += 1;
        }
    }
    Ok(hits as f64 / probes.len() as f64)
}

/// `|100 * N_p / (N_p + N_n) - 50|` for 0/1 labels (1 = positive).
pub fn imbalance_level(labels: &[usize]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyClass);
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::NotBinary(bad));
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    Ok((100.0 * positives as f64 / labels.len() as f64 - 50.0).abs())
}

/// Full evaluation summary for one classifier run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class_accuracy: BTreeMap<usize, f64>,
    pub balanced_accuracy: f64,
    pub overall_accuracy: f64,
    pub confusion_matrix: Vec<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub roc: Option<RocOutput>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imbalance_level: Option<f64>,
}

impl EvalReport {
    pub fn from_predictions(predictions: &[usize], labels: &[usize]) -> Result<Self> {
        let num_classes = labels
            .iter()
            .chain(predictions)
            .copied()
            .max()
            .map_or(0, |m| m + 1);
        let matrix = confusion_matrix(predictions, labels, num_classes)?;
        let mut per_class = BTreeMap::new();
        for (class, row) in matrix.iter().enumerate() {
            let total: usize = row.iter().sum();
            if total > 0 {
                per_class.insert(class, row[class] as f64 / total as f64);
            }
        }
        let imbalance = if num_classes == 2 {
            Some(imbalance_level(labels)?)
        } else {
            None
        };
        Ok(Self {
            per_class_accuracy: per_class,
            balanced_accuracy: balanced_accuracy(predictions, labels)?,
            overall_accuracy: overall_accuracy(predictions, labels)?,
            confusion_matrix: matrix,
            roc: None,
            imbalance_level: imbalance,
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Writes `class,accuracy` rows plus a trailing balanced-accuracy row.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["class", "accuracy"])?;
        for (class, acc) in &self.per_class_accuracy {
            writer.write_record([class.to_string(), format!("{acc}")])?;
        }
        writer.write_record(["balanced".to_string(), format!("{}", self.balanced_accuracy)])?;
        writer.write_record(["overall".to_string(), format!("{}", self.overall_accuracy)])?;
        writer.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_predictions_score_one() {
        let labels = vec![0, 1, 2, 1, 0];
        assert_eq!(balanced_accuracy(&labels, &labels).unwrap(), 1.0);
    }

    #[test]
    fn majority_vote_on_imbalanced_binary_pins_at_half() {
        let mut labels = vec![0usize; 90];
        labels.extend(vec![1usize; 10]);
        let predictions = vec![0usize; 100];
        assert_eq!(balanced_accuracy(&predictions, &labels).unwrap(), 0.5);
    }

    #[test]
    fn binary_formula_case() {
        // Np=10, tp=8, Nn=90, tn=45 -> 0.5(0.8 + 0.5) = 0.65.
        let mut labels = vec![1usize; 10];
        labels.extend(vec![0usize; 90]);
        let mut predictions = vec![1usize; 8];
        predictions.extend(vec![0usize; 2]);
        predictions.extend(vec![0usize; 45]);
        predictions.extend(vec![1usize; 45]);
        assert_abs_diff_eq!(
            balanced_accuracy(&predictions, &labels).unwrap(),
            0.65,
            epsilon = 1e-12
        );
    }

    #[test]
    fn equal_class_sizes_match_overall_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let labels: Vec<usize> = (0..60).map(|i| i % 3).collect();
        let predictions: Vec<usize> = (0..60).map(|_| rng.random_range(0..3)).collect();
        let ba = balanced_accuracy(&predictions, &labels).unwrap();
        let oa = overall_accuracy(&predictions, &labels).unwrap();
        assert_abs_diff_eq!(ba, oa, epsilon = 1e-12);
    }

    #[test]
    fn roc_separable_scores_reach_tar_one_at_any_far() {
        let mut pairs: Vec<(f64, bool)> = (0..10).map(|i| (1.0 + i as f64, true)).collect();
        pairs.extend((0..10).map(|i| (-1.0 - i as f64, false)));
        let out = roc_tar_far(&pairs, &[0.0, 0.001, 0.1]).unwrap();
        for t in &out.tar_at_far {
            assert_eq!(t.tar, 1.0);
        }
    }

    #[test]
    fn roc_identical_scores_is_diagonal_endpoints() {
        let pairs = vec![(0.5, true), (0.5, false), (0.5, true), (0.5, false)];
        let out = roc_tar_far(&pairs, &[0.0]).unwrap();
        assert_eq!(out.points.first().unwrap().tar, 0.0);
        assert_eq!(out.points.first().unwrap().far, 0.0);
        assert_eq!(out.points.last().unwrap().tar, 1.0);
        assert_eq!(out.points.last().unwrap().far, 1.0);
        assert_eq!(out.tar_at_far[0].tar, 0.0);
    }

    #[test]
    fn roc_curve_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs: Vec<(f64, bool)> = (0..200)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random::<bool>()))
            .collect();
        let out = roc_tar_far(&pairs, &[0.1]).unwrap();
        for w in out.points.windows(2) {
            assert!(w[1].far >= w[0].far);
            assert!(w[1].tar >= w[0].tar);
        }
        assert_eq!(out.points.last().unwrap().far, 1.0);
        assert_eq!(out.points.last().unwrap().tar, 1.0);
    }

    #[test]
    fn tar_at_far_matches_exhaustive_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let pairs: Vec<(f64, bool)> = (0..80)
                .map(|_| (rng.random_range(-1.0..1.0), rng.random::<bool>()))
                .collect();
            if pairs.iter().all(|p| p.1) || pairs.iter().all(|p| !p.1) {
                continue;
            }
            let target = 0.1;
            let out = roc_tar_far(&pairs, &[target]).unwrap();

            // Exhaustive oracle: try every candidate threshold directly.
            let negatives = pairs.iter().filter(|p| !p.1).count() as f64;
            let positives = pairs.iter().filter(|p| p.1).count() as f64;
            let mut candidates: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            candidates.push(f64::INFINITY);
            let mut best_tar = 0.0f64;
            for &t in &candidates {
                let far = pairs.iter().filter(|p| !p.1 && p.0 >= t).count() as f64 / negatives;
                let tar = pairs.iter().filter(|p| p.1 && p.0 >= t).count() as f64 / positives;
                if far <= target {
                    best_tar = best_tar.max(tar);
                }
            }
            assert_eq!(out.tar_at_far[0].tar, best_tar);
        }
    }

    #[test]
    fn rank1_identification_cases() {
        let gallery: Vec<(Vec<f64>, usize)> = vec![
            (vec![1.0, 0.0], 0),
            (vec![0.0, 1.0], 1),
        ];
        let probes = gallery.clone();
        assert_eq!(rank1_identification(&probes, &gallery).unwrap(), 1.0);
        let wrong: Vec<(Vec<f64>, usize)> = gallery
            .iter()
            .map(|(v, l)| (v.clone(), 1 - l))
            .collect();
        assert_eq!(rank1_identification(&probes, &wrong).unwrap(), 0.0);
    }

    #[test]
    fn imbalance_level_cases() {
        assert_eq!(imbalance_level(&[0, 1, 0, 1]).unwrap(), 0.0);
        let mut labels = vec![1usize; 2];
        labels.extend(vec![0usize; 98]);
        assert_abs_diff_eq!(imbalance_level(&labels).unwrap(), 48.0, epsilon = 1e-12);
        assert_eq!(imbalance_level(&[1, 1, 1]).unwrap(), 50.0);
        assert!(matches!(imbalance_level(&[0, 2]), Err(Error::NotBinary(2))));
    }

    #[test]
    fn balanced_accuracy_invariant_under_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let labels: Vec<usize> = (0..50).map(|_| rng.random_range(0..4)).collect();
        let predictions: Vec<usize> = (0..50).map(|_| rng.random_range(0..4)).collect();
        let base = balanced_accuracy(&predictions, &labels).unwrap();
        let mut order: Vec<usize> = (0..50).collect();
        order.shuffle(&mut rng);
        let p2: Vec<usize> = order.iter().map(|&i| predictions[i]).collect();
        let l2: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        assert_eq!(base, balanced_accuracy(&p2, &l2).unwrap());
    }

    #[test]
    fn eval_report_rows_sum_to_class_counts() {
        let labels = vec![0, 0, 1, 1, 1, 2];
        let predictions = vec![0, 1, 1, 1, 0, 2];
        let report = EvalReport::from_predictions(&predictions, &labels).unwrap();
        for (class, row) in report.confusion_matrix.iter().enumerate() {
            let total: usize = row.iter().sum();
            assert_eq!(total, labels.iter().filter(|&&l| l == class).count());
        }
        assert!(report.balanced_accuracy > 0.0 && report.balanced_accuracy <= 1.0);
    }
}
