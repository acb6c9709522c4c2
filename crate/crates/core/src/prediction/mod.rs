//! Per-interval capacity distributions from feature vectors.
//!
//! Capacity prediction is treated as classification over `0..=MAX` with one
//! independent model per (airport, operation type). Two predictors are
//! available: an empirical histogram over coarse feature buckets and a small
//! softmax perceptron trained on cross-entropy.

pub mod mlp;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capacity::{AirportId, OpType};
use crate::pmf::{Pmf, PmfError, PROB_TOL};
use mlp::MlpParams;

/// Length of every feature vector.
pub const FEATURE_DIM: usize = 17;

#[derive(Debug, Error)]
pub enum PredictionError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} exceeds maximum capacity {max}")]
    LabelOutOfRange { label: u32, max: u32 },
    #[error("feature vector has {found} values, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Pmf(#[from] PmfError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Result<Self, PredictionError> {
        if values.len() != FEATURE_DIM {
            return Err(PredictionError::DimensionMismatch {
                expected: FEATURE_DIM,
                found: values.len(),
            });
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = PredictionError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub capacity: u32,
}

/// Min-max bounds fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit<'a>(xs: impl IntoIterator<Item = &'a FeatureVector>) -> Self {
        let mut min = vec![f64::INFINITY; FEATURE_DIM];
        let mut max = vec![f64::NEG_INFINITY; FEATURE_DIM];
        for x in xs {
            for (i, v) in x.values().iter().enumerate() {
                min[i] = min[i].min(*v);
                max[i] = max[i].max(*v);
            }
        }
        Self { min, max }
    }

    /// Scales into `[0, 1]`; constant features map to 0, out-of-range values are clamped.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| {
                let span = self.max[i] - self.min[i];
                if span > 0.0 {
                    ((v - self.min[i]) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Empirical,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub kind: PredictorKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Largest capacity class; defaults to the largest training label.
    pub max_capacity: Option<u32>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Mlp,
            learning_rate: 1e-4,
            epochs: 300,
            batch_size: 16,
            seed: 0,
            max_capacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub key: Vec<u8>,
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalParams {
    pub global: Vec<u32>,
    pub buckets: Vec<Bucket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "weights", rename_all = "snake_case")]
pub enum ModelParams {
    Empirical(EmpiricalParams),
    Mlp(MlpParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorModel {
    pub airport: AirportId,
    pub op_type: OpType,
    pub max_capacity: u32,
    pub normalization: MinMax,
    #[serde(flatten)]
    pub params: ModelParams,
}

/// Coordinates rounded to one decimal.
fn bucket_key(normalized: &[f64]) -> Vec<u8> {
    normalized.iter().map(|v| (v * 10.0).round() as u8).collect()
}

/// One-hot encoding of a capacity label over `0..=max`.
pub fn one_hot(label: u32, max_capacity: u32) -> Vec<f64> {
    (0..=max_capacity).map(|c| if c == label { 1.0 } else { 0.0 }).collect()
}

pub fn train(
    airport: &str,
    op_type: OpType,
    dataset: &[LabeledSample],
    config: &TrainConfig,
) -> Result<PredictorModel, PredictionError> {
    train_with_history(airport, op_type, dataset, config).map(|(m, _)| m)
}

/// Trains a model and also returns the per-epoch training loss (empty for
/// the empirical predictor).
pub fn train_with_history(
    airport: &str,
    op_type: OpType,
    dataset: &[LabeledSample],
    config: &TrainConfig,
) -> Result<(PredictorModel, Vec<f64>), PredictionError> {
    if dataset.is_empty() {
        return Err(PredictionError::EmptyDataset);
    }
    let observed_max = dataset.iter().map(|s| s.capacity).max().unwrap_or(0);
    let max_capacity = config.max_capacity.unwrap_or(observed_max);
    if let Some(s) = dataset.iter().find(|s| s.capacity > max_capacity) {
        return Err(PredictionError::LabelOutOfRange {
            label: s.capacity,
            max: max_capacity,
        });
    }
    let normalization = MinMax::fit(dataset.iter().map(|s| &s.features));
    let xs: Vec<Vec<f64>> = dataset
        .iter()
        .map(|s| normalization.apply(s.features.values()))
        .collect();
    let classes = max_capacity as usize + 1;

    let (params, history) = match config.kind {
        PredictorKind::Empirical => {
            let mut global = vec![0u32; classes];
            let mut buckets: BTreeMap<Vec<u8>, Vec<u32>> = BTreeMap::new();
            for (x, s) in xs.iter().zip(dataset) {
                global[s.capacity as usize] += 1;
                buckets
                    .entry(bucket_key(x))
                    .or_insert_with(|| vec![0; classes])[s.capacity as usize] += 1;
            }
            let buckets = buckets
                .into_iter()
                .map(|(key, counts)| Bucket { key, counts })
                .collect();
            (ModelParams::Empirical(EmpiricalParams { global, buckets }), Vec::new())
        }
        PredictorKind::Mlp => {
            let labels: Vec<usize> = dataset.iter().map(|s| s.capacity as usize).collect();
            let mut p = MlpParams::random(classes, config.seed);
            let history = p.fit(
                &xs,
                &labels,
                config.learning_rate,
                config.epochs,
                config.batch_size,
                config.seed,
            );
            (ModelParams::Mlp(p), history)
        }
    };
    Ok((
        PredictorModel {
            airport: airport.to_string(),
            op_type,
            max_capacity,
            normalization,
            params,
        },
        history,
    ))
}

impl PredictorModel {
    /// Untrained perceptron with all-zero parameters.
    pub fn zero_mlp(airport: &str, op_type: OpType, max_capacity: u32) -> Self {
        Self {
            airport: airport.to_string(),
            op_type,
            max_capacity,
            normalization: MinMax {
                min: vec![0.0; FEATURE_DIM],
                max: vec![1.0; FEATURE_DIM],
            },
            params: ModelParams::Mlp(MlpParams::zeros(max_capacity as usize + 1)),
        }
    }

    pub fn kind(&self) -> PredictorKind {
        match self.params {
            ModelParams::Empirical(_) => PredictorKind::Empirical,
            ModelParams::Mlp(_) => PredictorKind::Mlp,
        }
    }

    /// Capacity distribution on `0..=max_capacity` for raw (unnormalized) features.
    pub fn predict_pmf(&self, features: &[f64]) -> Result<Pmf, PredictionError> {
        if features.len() != FEATURE_DIM {
            return Err(PredictionError::DimensionMismatch {
                expected: FEATURE_DIM,
                found: features.len(),
            });
        }
        let x = self.normalization.apply(features);
        let weights = match &self.params {
            ModelParams::Mlp(p) => p.predict(&x),
            ModelParams::Empirical(e) => {
                let key = bucket_key(&x);
                let counts = e
                    .buckets
                    .binary_search_by(|b| b.key.cmp(&key))
                    .map(|i| &e.buckets[i].counts)
                    .unwrap_or(&e.global);
                let total: u32 = counts.iter().sum();
                counts.iter().map(|&c| c as f64 / total as f64).collect()
            }
        };
        Ok(Pmf::from_dense(weights)?)
    }
}

/// Most probable capacity, ties toward the smaller value.
pub fn point_prediction(p: &Pmf) -> u32 {
    let mut best = (p.support()[0], p.weights()[0]);
    for (s, w) in p.iter().skip(1) {
        if w > best.1 {
            best = (s, w);
        }
    }
    best.0
}

/// Smallest set of capacities, taken in decreasing probability (ties toward the
/// smaller capacity), whose mass reaches `level`.
pub fn tolerance_interval(p: &Pmf, level: f64) -> BTreeSet<u32> {
    let mut order: Vec<(u32, f64)> = p.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut set = BTreeSet::new();
    let mut acc = 0.0;
    for (s, w) in order {
        set.insert(s);
        acc += w;
        // summation dust: 0.7 + 0.1 + 0.1 < 0.9 in binary floating point
        if acc >= level - PROB_TOL {
            break;
        }
    }
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionMetrics {
    pub rmse: f64,
    pub mae: f64,
    pub picp: f64,
    pub mpiw: f64,
}

/// Point and interval metrics from (predicted PMF, true capacity) pairs.
pub fn metrics_from_predictions<'a>(
    pairs: impl IntoIterator<Item = (&'a Pmf, u32)>,
    level: f64,
) -> Result<PredictionMetrics, PredictionError> {
    let (mut n, mut se, mut ae, mut covered, mut width) = (0usize, 0.0, 0.0, 0usize, 0usize);
    for (pmf, truth) in pairs {
        let err = point_prediction(pmf) as f64 - truth as f64;
        se += err * err;
        ae += err.abs();
        let interval = tolerance_interval(pmf, level);
        covered += interval.contains(&truth) as usize;
        width += interval.len();
        n += 1;
    }
    if n == 0 {
        return Err(PredictionError::EmptyDataset);
    }
    let n = n as f64;
    Ok(PredictionMetrics {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        picp: covered as f64 / n,
        mpiw: width as f64 / n,
    })
}

pub fn evaluate(
    model: &PredictorModel,
    test: &[LabeledSample],
    level: f64,
) -> Result<PredictionMetrics, PredictionError> {
    let pmfs = test
        .iter()
        .map(|s| model.predict_pmf(s.features.values()))
        .collect::<Result<Vec<_>, _>>()?;
    metrics_from_predictions(pmfs.iter().zip(test.iter().map(|s| s.capacity)), level)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TemporalSplit<T> {
    pub train: Vec<T>,
    pub validation: Vec<T>,
    pub test: Vec<T>,
}

/// Weeks 1-10 of each quarter train, week 11 validates, week 12 tests; any
/// remaining week is dropped.
pub fn temporal_split<T>(rows: impl IntoIterator<Item = (u32, T)>) -> TemporalSplit<T> {
    let mut split = TemporalSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
    };
    for (week_of_quarter, row) in rows {
        match week_of_quarter {
            1..=10 => split.train.push(row),
            11 => split.validation.push(row),
            12 => split.test.push(row),
            _ => {}
        }
    }
    split
}

#[cfg(test)]
mod tests {
    use super::*;

    fn six_atoms() -> Pmf {
        Pmf::from_dense(vec![0.05, 0.10, 0.70, 0.10, 0.03, 0.02]).unwrap()
    }

    fn fv(v: f64) -> FeatureVector {
        FeatureVector::new(vec![v; FEATURE_DIM]).unwrap()
    }

    #[test]
    fn empirical_on_degenerate_data() {
        let data: Vec<_> = (0..5)
            .map(|_| LabeledSample { features: fv(0.3), capacity: 2 })
            .collect();
        let cfg = TrainConfig { kind: PredictorKind::Empirical, ..Default::default() };
        let m = train("ATL", OpType::Arrival, &data, &cfg).unwrap();
        let p = m.predict_pmf(fv(0.3).values()).unwrap();
        assert_eq!(p.weight_of(2), 1.0);
        assert_eq!(point_prediction(&p), 2);
    }

    #[test]
    fn one_hot_encoding() {
        assert_eq!(one_hot(2, 5), vec![0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn train_errors() {
        let cfg = TrainConfig::default();
        assert!(matches!(
            train("ATL", OpType::Arrival, &[], &cfg),
            Err(PredictionError::EmptyDataset)
        ));
        let data = vec![LabeledSample { features: fv(0.0), capacity: 7 }];
        let cfg = TrainConfig { max_capacity: Some(5), ..Default::default() };
        assert!(matches!(
            train("ATL", OpType::Arrival, &data, &cfg),
            Err(PredictionError::LabelOutOfRange { label: 7, max: 5 })
        ));
    }

    #[test]
    fn zero_mlp_is_uniform() {
        let m = PredictorModel::zero_mlp("ATL", OpType::Departure, 4);
        let p = m.predict_pmf(&[0.5; FEATURE_DIM]).unwrap();
        assert_eq!(p.len(), 5);
        assert!(p.weights().iter().all(|&w| (w - 0.2).abs() < 1e-15));
        assert!(matches!(
            m.predict_pmf(&[0.5; 3]),
            Err(PredictionError::DimensionMismatch { expected: 17, found: 3 })
        ));
        assert!(FeatureVector::new(vec![0.0; 16]).is_err());
    }

    #[test]
    fn mlp_loss_decreases_on_separable_data() {
        let data: Vec<_> = (0..40)
            .map(|i| {
                let hi = i % 2 == 0;
                let mut v = vec![0.0; FEATURE_DIM];
                v[0] = if hi { 1.0 } else { 0.0 };
                v[1] = (i as f64 * 0.13).sin();
                LabeledSample {
                    features: FeatureVector::new(v).unwrap(),
                    capacity: if hi { 1 } else { 0 },
                }
            })
            .collect();
        let cfg = TrainConfig { learning_rate: 0.05, epochs: 10, seed: 3, ..Default::default() };
        let (model, history) = train_with_history("ATL", OpType::Arrival, &data, &cfg).unwrap();
        assert_eq!(history.len(), 10);
        assert!(history.windows(2).all(|w| w[1] < w[0]), "{history:?}");
        let p = model.predict_pmf(data[0].features.values()).unwrap();
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn point_prediction_examples() {
        assert_eq!(point_prediction(&six_atoms()), 2);
        assert_eq!(point_prediction(&Pmf::from_dense(vec![0.5, 0.5]).unwrap()), 0);
        assert_eq!(point_prediction(&Pmf::point_mass(4)), 4);
    }

    #[test]
    fn tolerance_interval_examples() {
        assert_eq!(tolerance_interval(&Pmf::point_mass(3), 0.9), BTreeSet::from([3]));
        // 0.70 + 0.10 + 0.10, the tie at 0.10 going to 1 before 3
        assert_eq!(tolerance_interval(&six_atoms(), 0.9), BTreeSet::from([1, 2, 3]));
        let uniform = Pmf::from_dense(vec![0.1; 10]).unwrap();
        assert_eq!(tolerance_interval(&uniform, 0.9), (0..9).collect());
    }

    #[test]
    fn metrics_examples() {
        let truths = [3u32, 5, 0];
        let pmfs: Vec<Pmf> = truths.iter().map(|&t| Pmf::point_mass(t)).collect();
        let m = metrics_from_predictions(pmfs.iter().zip(truths), 0.9).unwrap();
        assert_eq!((m.rmse, m.mae, m.picp, m.mpiw), (0.0, 0.0, 1.0, 1.0));

        let p = six_atoms();
        let m = metrics_from_predictions([(&p, 2), (&p, 2)], 0.9).unwrap();
        assert_eq!((m.mae, m.picp, m.mpiw), (0.0, 1.0, 3.0));

        let (a, b) = (Pmf::point_mass(2), Pmf::point_mass(2));
        let m = metrics_from_predictions([(&a, 2), (&b, 4)], 0.9).unwrap();
        assert_eq!(m.mae, 1.0);
        assert!((m.rmse - 2f64.sqrt()).abs() < 1e-15);

        assert!(matches!(
            metrics_from_predictions(std::iter::empty(), 0.9),
            Err(PredictionError::EmptyDataset)
        ));
    }

    #[test]
    fn normalization_uses_training_bounds_only() {
        let train_set = vec![
            LabeledSample { features: fv(0.0), capacity: 1 },
            LabeledSample { features: fv(10.0), capacity: 2 },
        ];
        let cfg = TrainConfig { kind: PredictorKind::Empirical, ..Default::default() };
        let m = train("ATL", OpType::Arrival, &train_set, &cfg).unwrap();
        assert_eq!(m.normalization.min, vec![0.0; FEATURE_DIM]);
        assert_eq!(m.normalization.max, vec![10.0; FEATURE_DIM]);
        assert_eq!(m.normalization.apply(&[5.0; FEATURE_DIM]), vec![0.5; FEATURE_DIM]);
        assert_eq!(m.normalization.apply(&[20.0; FEATURE_DIM]), vec![1.0; FEATURE_DIM]);
        // an unseen bucket falls back to the global histogram
        let p = m.predict_pmf(&[5.0; FEATURE_DIM]).unwrap();
        assert_eq!(p.weights(), &[0.0, 0.5, 0.5]);
    }

    #[test]
    fn model_json_round_trip() {
        let m = PredictorModel::zero_mlp("ATL", OpType::Departure, 2);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains(r#""kind":"mlp""#));
        let back: PredictorModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn split_by_week_of_quarter() {
        let s = temporal_split((1..=13).map(|w| (w, w)));
        assert_eq!(s.train, (1..=10).collect::<Vec<_>>());
        assert_eq!(s.validation, vec![11]);
        assert_eq!(s.test, vec![12]);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn tolerance_interval_is_minimal(ws in proptest::collection::vec(0.0f64..1.0, 1..12), level in 0.05f64..0.99) {
            let total: f64 = ws.iter().sum();
            prop_assume!(total > 0.0);
            let p = Pmf::from_dense(ws.iter().map(|w| w / total).collect()).unwrap();
            let set = tolerance_interval(&p, level);
            let mass: f64 = set.iter().map(|&s| p.weight_of(s)).sum();
            prop_assert!(mass >= level - PROB_TOL);
            let lowest = set.iter().map(|&s| p.weight_of(s)).fold(f64::INFINITY, f64::min);
            prop_assert!(mass - lowest < level - PROB_TOL || set.len() == 1 || lowest == 0.0);
        }

        #[test]
        fn mlp_outputs_are_valid_pmfs(seed in 0u64..1000, x in proptest::collection::vec(-5.0f64..5.0, FEATURE_DIM)) {
            let m = PredictorModel {
                params: ModelParams::Mlp(MlpParams::random(6, seed)),
                ..PredictorModel::zero_mlp("X", OpType::Arrival, 5)
            };
            let p = m.predict_pmf(&x).unwrap();
            prop_assert_eq!(p.len(), 6);
            prop_assert!((p.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }
}
