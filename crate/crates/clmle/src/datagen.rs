//! Synthetic class-imbalanced datasets: class sizes follow the power law
//! `f(c) = L_max / (c^gamma + L_min)`, each class draws from several Gaussian
//! modes around well-separated unit directions, and samples are split
//! 70/10/20 stratified by class.

use std::collections::BTreeMap;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypersphere::{dot, l2_norm};

/// Minimum pairwise angle between mode means, in degrees. Enforced globally
/// across classes so no two modes coincide and the task stays separable.
const MIN_MODE_ANGLE_DEG: f64 = 30.0;

/// Parameters of one synthetic benchmark.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of classes C.
    pub classes: usize,
    /// Imbalance exponent; smaller means more imbalanced.
    pub gamma: f64,
    /// Largest class-size scale.
    pub l_max: usize,
    /// Smallest class-size scale (denominator offset).
    pub l_min: usize,
    /// Gaussian modes per class.
    pub modes_per_class: usize,
    /// Ambient (raw feature) dimension.
    pub ambient_dim: usize,
    /// Per-coordinate standard deviation around each mode mean.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::SpecError("at least 2 classes required".into()));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::SpecError(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.l_min < 1 || self.l_max < self.l_min {
            return Err(Error::SpecError(format!(
                "need l_max >= l_min >= 1, got l_max={}, l_min={}",
                self.l_max, self.l_min
            )));
        }
        if self.modes_per_class < 1 {
            return Err(Error::SpecError("at least one mode per class".into()));
        }
        if self.ambient_dim < 2 {
            return Err(Error::SpecError("ambient dimension must be >= 2".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::SpecError("noise scale must be non-negative".into()));
        }
        Ok(())
    }

    /// Sample count for class `c` (1-based): `round(l_max/(c^gamma + l_min))`,
    /// floored at 1.
    pub fn class_size(&self, c: usize) -> usize {
        let f = self.l_max as f64 / ((c as f64).powf(self.gamma) + self.l_min as f64);
        (f.round() as usize).max(1)
    }
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: 10,
            gamma: 0.5,
            l_max: 500,
            l_min: 5,
            modes_per_class: 3,
            ambient_dim: 32,
            noise_scale: 0.15,
            seed: 0,
        }
    }
}

/// Stratified sample-id split.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// A labeled dataset of raw (pre-normalization) feature vectors.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Raw feature vectors, indexed by sample id.
    pub features: Vec<Vec<f64>>,
    /// Class label per sample id.
    pub labels: Vec<usize>,
    pub split: Split,
    pub spec: Option<SyntheticSpec>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().copied().max().map_or(0, |m| m + 1)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    /// Writes `id,label,f0,...` rows plus a JSON sidecar holding the spec and
    /// the split ids.
    pub fn save(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(csv_path)?;
        let dim = self.feature_dim();
        let mut header = vec!["id".to_string(), "label".to_string()];
        header.extend((0..dim).map(|j| format!("f{j}")));
        writer.write_record(&header)?;
        for (id, (features, label)) in self.features.iter().zip(&self.labels).enumerate() {
            let mut record = vec![id.to_string(), label.to_string()];
            record.extend(features.iter().map(|x| format!("{x}")));
            writer.write_record(&record)?;
        }
        writer.flush()?;

        #[derive(Serialize)]
        struct Sidecar<'a> {
            spec: &'a Option<SyntheticSpec>,
            split: &'a Split,
        }
        let file = std::fs::File::create(sidecar_path)?;
        serde_json::to_writer_pretty(
            std::io::BufWriter::new(file),
            &Sidecar {
                spec: &self.spec,
                split: &self.split,
            },
        )?;
        Ok(())
    }

    /// Loads a dataset written by [`Dataset::save`].
    pub fn load(csv_path: &Path, sidecar_path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(csv_path)?;
        let mut rows: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |s: &str| -> Result<f64> {
                s.parse::<f64>()
                    .map_err(|e| Error::ConfigError(format!("bad dataset cell '{s}': {e}")))
            };
            let id = record
                .get(0)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::ConfigError("missing id column".into()))?;
            let label = record
                .get(1)
                .and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::ConfigError("missing label column".into()))?;
            let features = record
                .iter()
                .skip(2)
                .map(parse)
                .collect::<Result<Vec<f64>>>()?;
            rows.push((id, label, features));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(i, r)| r.0 != i) {
            return Err(Error::ConfigError(
                "dataset ids must be contiguous from 0".into(),
            ));
        }

        #[derive(Deserialize)]
        struct Sidecar {
            spec: Option<SyntheticSpec>,
            split: Split,
        }
        let file = std::fs::File::open(sidecar_path)?;
        let sidecar: Sidecar = serde_json::from_reader(std::io::BufReader::new(file))?;

        Ok(Self {
            features: rows.iter().map(|r| r.2.clone()).collect(),
            labels: rows.iter().map(|r| r.1).collect(),
            split: sidecar.split,
            spec: sidecar.spec,
        })
    }
}

/// Generates the power-law dataset for `spec` deterministically from its seed.
pub fn gen_power_law(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mode_means = draw_mode_means(
        spec.classes * spec.modes_per_class,
        spec.ambient_dim,
        &mut rng,
    )?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for c in 1..=spec.classes {
        let size = spec.class_size(c);
        let class_modes =
            &mode_means[(c - 1) * spec.modes_per_class..c * spec.modes_per_class];
        for _ in 0..size {
            let mode = &class_modes[rng.random_range(0..class_modes.len())];
            let sample: Vec<f64> = mode
                .iter()
                .map(|&m| {
                    let eps: f64 = StandardNormal.sample(&mut rng);
                    m + spec.noise_scale * eps
                })
                .collect();
            features.push(sample);
            labels.push(c - 1);
        }
    }

    let split = stratified_split(&labels, &mut rng);
    Ok(Dataset {
        features,
        labels,
        split,
        spec: Some(spec.clone()),
    })
}

/// Unit-vector mode means with pairwise angle at least 30 degrees, drawn by
/// rejection.
fn draw_mode_means(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let min_cos = MIN_MODE_ANGLE_DEG.to_radians().cos();
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while means.len() < count {
        attempts += 1;
        if attempts > 10_000 * count {
            return Err(Error::SpecError(format!(
                "could not place {count} mode means with pairwise angle >= {MIN_MODE_ANGLE_DEG} degrees in dimension {dim}"
            )));
        }
        let raw: Vec<f64> = (0..dim)
            .map(|_| {
                let x: f64 = StandardNormal.sample(rng);
                x
            })
            .collect();
        let norm = l2_norm(&raw);
        if norm < 1e-9 {
            continue;
        }
        let candidate: Vec<f64> = raw.iter().map(|x| x / norm).collect();
        if means.iter().all(|m| dot(m, &candidate) < min_cos) {
            means.push(candidate);
        }
    }
    Ok(means)
}

/// 70/10/20 split per class, shuffled by the shared rng. Every class keeps at
/// least one training sample.
fn stratified_split(labels: &[usize], rng: &mut ChaCha8Rng) -> Split {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (id, &label) in labels.iter().enumerate() {
        by_class.entry(label).or_default().push(id);
    }
    let mut split = Split::default();
    for ids in by_class.values() {
        let mut ids = ids.clone();
        ids.shuffle(rng);
        let n = ids.len();
        let n_train = ((0.7 * n as f64).floor() as usize).max(1).min(n);
        let n_val = ((0.1 * n as f64).floor() as usize).min(n - n_train);
        split.train.extend(&ids[..n_train]);
        split.val.extend(&ids[n_train..n_train + n_val]);
        split.test.extend(&ids[n_train + n_val..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_law_sizes_match_formula() {
        let spec = SyntheticSpec {
            classes: 2,
            gamma: 1.0,
            l_max: 100,
            l_min: 1,
            modes_per_class: 1,
            ambient_dim: 4,
            noise_scale: 0.1,
            seed: 0,
        };
        assert_eq!(spec.class_size(1), 50);
        assert_eq!(spec.class_size(2), 33);
        let data = gen_power_law(&spec).unwrap();
        assert_eq!(data.labels.iter().filter(|&&l| l == 0).count(), 50);
        assert_eq!(data.labels.iter().filter(|&&l| l == 1).count(), 33);
    }

    #[test]
    fn large_gamma_collapses_tail_classes() {
        let spec = SyntheticSpec {
            classes: 5,
            gamma: 8.0,
            l_max: 200,
            l_min: 2,
            modes_per_class: 1,
            ambient_dim: 4,
            noise_scale: 0.1,
            seed: 0,
        };
        assert_eq!(spec.class_size(1), (200.0f64 / 3.0).round() as usize);
        // c^8 dominates: later classes collapse to the floor of 1.
        assert_eq!(spec.class_size(5), 1);
    }

    #[test]
    fn sizes_non_increasing_in_class_index() {
        let spec = SyntheticSpec::default();
        let sizes: Vec<usize> = (1..=spec.classes).map(|c| spec.class_size(c)).collect();
        assert!(sizes.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = SyntheticSpec {
            classes: 3,
            gamma: 0.7,
            l_max: 60,
            l_min: 2,
            modes_per_class: 2,
            ambient_dim: 6,
            noise_scale: 0.2,
            seed: 99,
        };
        let a = gen_power_law(&spec).unwrap();
        let b = gen_power_law(&spec).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.split.train, b.split.train);
        assert_eq!(a.split.val, b.split.val);
        assert_eq!(a.split.test, b.split.test);
    }

    #[test]
    fn split_is_a_partition() {
        let data = gen_power_law(&SyntheticSpec::default()).unwrap();
        let mut all: Vec<usize> = data
            .split
            .train
            .iter()
            .chain(&data.split.val)
            .chain(&data.split.test)
            .copied()
            .collect();
        all.sort_unstable();
        let expected: Vec<usize> = (0..data.len()).collect();
        assert_eq!(all, expected);
    }

    #[test]
    fn mode_means_respect_min_angle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let means = draw_mode_means(30, 32, &mut rng).unwrap();
        let min_cos = 30.0f64.to_radians().cos();
        for i in 0..means.len() {
            for j in 0..i {
                assert!(dot(&means[i], &means[j]) < min_cos);
            }
        }
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut spec = SyntheticSpec::default();
        spec.gamma = 0.0;
        assert!(matches!(gen_power_law(&spec), Err(Error::SpecError(_))));
    }

    #[test]
    fn csv_roundtrip_preserves_dataset() {
        let spec = SyntheticSpec {
            classes: 2,
            gamma: 1.0,
            l_max: 20,
            l_min: 1,
            modes_per_class: 1,
            ambient_dim: 3,
            noise_scale: 0.1,
            seed: 5,
        };
        let data = gen_power_law(&spec).unwrap();
        let dir = std::env::temp_dir().join("clmle_datagen_test");
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("data.csv");
        let sidecar = dir.join("data.json");
        data.save(&csv_path, &sidecar).unwrap();
        let loaded = Dataset::load(&csv_path, &sidecar).unwrap();
        assert_eq!(loaded.labels, data.labels);
        assert_eq!(loaded.split.train, data.split.train);
        assert_eq!(loaded.len(), data.len());
        for (a, b) in loaded.features.iter().zip(&data.features) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
