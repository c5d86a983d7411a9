//! Multiclass softmax relation classifier over hashed sparse features.
//!
//! The model is linear: one weight row per hashed feature (holding a weight for
//! every label) plus a per-label bias. Training minimizes mean cross-entropy plus
//! `l2/2 * ||W||^2` (biases unregularized) by mini-batch SGD whose learning rate
//! decays as `1/sqrt(t)` in the epoch number `t`.

mod external;
mod features;
mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::hash::Hasher;

use fnv::{FnvBuildHasher, FnvHasher};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use external::{
    load_external_predictions, read_predictions, write_predictions, ExternalError,
    ExternalScoreFile,
};
pub use features::{distance_bucket, featurize, FeatureVector};
pub use persist::{
    load_artifact, load_model, save_artifact, save_model, Artifact, PersistError, FORMAT_VERSION,
};

use crate::corpus::RelationLabel;
use crate::labels::{LabelError, LabelVocabulary};
use crate::markers::{MarkedInstance, MarkerScheme};

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("degenerate label set: training data needs at least two distinct labels")]
    DegenerateLabels,
    #[error("empty training set")]
    Empty,
    #[error("mixed marker schemes in training data: {0} and {1}")]
    MixedSchemes(MarkerScheme, MarkerScheme),
    #[error("scheme mismatch: model uses {model}, instance {id} was marked with {instance}")]
    SchemeMismatch {
        id: String,
        model: MarkerScheme,
        instance: MarkerScheme,
    },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Label(#[from] LabelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Size of the hashed feature space; a power of two.
    pub hash_dim: usize,
    pub ngram_orders: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            epochs: 5,
            learning_rate: 0.1,
            l2: 1e-6,
            seed: 42,
            hash_dim: 1 << 20,
            ngram_orders: vec![1, 2],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let bad = |m: &str| Err(ClassifierError::BadConfig(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 strength must be non-negative");
        }
        if !self.hash_dim.is_power_of_two() || self.hash_dim > 1 << 31 {
            return bad("hash dimension must be a power of two no larger than 2^31");
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return bad("n-gram orders must be a non-empty list of positive integers");
        }
        Ok(())
    }

    /// Stable hash of every field, recorded in trained models.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        h.write_u64(self.batch_size as u64);
        h.write_u64(self.epochs as u64);
        h.write_u64(self.learning_rate.to_bits());
        h.write_u64(self.l2.to_bits());
        h.write_u64(self.seed);
        h.write_u64(self.hash_dim as u64);
        for &n in &self.ngram_orders {
            h.write_u64(n as u64);
        }
        h.finish()
    }
}

/// A prediction for one instance. Probabilities, when present, are ordered like the
/// producing model's label vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: RelationLabel,
    pub probabilities: Option<Vec<f64>>,
    pub gold: Option<RelationLabel>,
}

impl PredictionRecord {
    pub fn new(id: impl Into<String>, label: RelationLabel) -> Self {
        PredictionRecord {
            id: id.into(),
            label,
            probabilities: None,
            gold: None,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

type Rows = HashMap<u32, Vec<f64>, FnvBuildHasher>;

/// Exact gradient of the batch objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub bias: Vec<f64>,
    pub weights: BTreeMap<u32, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel {
    labels: LabelVocabulary,
    scheme: MarkerScheme,
    config: TrainConfig,
    bias: Vec<f64>,
    rows: Rows,
}

impl SoftmaxModel {
    /// A model with all weights zero.
    pub fn zeros(labels: LabelVocabulary, scheme: MarkerScheme, config: TrainConfig) -> Self {
        let k = labels.len();
        SoftmaxModel {
            labels,
            scheme,
            config,
            bias: vec![0.0; k],
            rows: Rows::default(),
        }
    }

    pub fn labels(&self) -> &LabelVocabulary {
        &self.labels
    }

    pub fn scheme(&self) -> MarkerScheme {
        self.scheme
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn set_bias(&mut self, label: usize, value: f64) {
        self.bias[label] = value;
    }

    pub fn weight(&self, feature: u32, label: usize) -> f64 {
        self.rows.get(&feature).map_or(0.0, |r| r[label])
    }

    pub fn set_weight(&mut self, feature: u32, label: usize, value: f64) {
        let k = self.labels.len();
        self.rows.entry(feature).or_insert_with(|| vec![0.0; k])[label] = value;
    }

    /// Number of stored feature rows.
    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub(crate) fn sorted_rows(&self) -> Vec<(u32, &[f64])> {
        let mut rows: Vec<(u32, &[f64])> = self.rows.iter().map(|(f, r)| (*f, r.as_slice())).collect();
        rows.sort_unstable_by_key(|r| r.0);
        rows
    }

    pub(crate) fn from_parts(
        labels: LabelVocabulary,
        scheme: MarkerScheme,
        config: TrainConfig,
        bias: Vec<f64>,
        rows: Vec<(u32, Vec<f64>)>,
    ) -> Self {
        SoftmaxModel {
            labels,
            scheme,
            config,
            bias,
            rows: rows.into_iter().collect(),
        }
    }

    /// Hash over labels, scheme, config and the exact bits of every parameter.
    pub fn fingerprint(&self) -> u64 {
        let mut h = FnvHasher::default();
        for l in self.labels.labels() {
            h.write(l.as_str().as_bytes());
            h.write_u8(0);
        }
        h.write_u8(self.scheme.code());
        h.write_u64(self.config.fingerprint());
        for b in &self.bias {
            h.write_u64(b.to_bits());
        }
        for (f, row) in self.sorted_rows() {
            h.write_u32(f);
            for w in row {
                h.write_u64(w.to_bits());
            }
        }
        h.finish()
    }

    pub fn scores(&self, features: &FeatureVector) -> Vec<f64> {
        scores_scaled(&self.bias, &self.rows, 1.0, features)
    }

    pub fn probabilities(&self, features: &FeatureVector) -> Vec<f64> {
        softmax(&self.scores(features))
    }

    /// Mean cross-entropy over `batch` plus `l2/2 * ||W||^2`.
    pub fn objective(&self, batch: &[(FeatureVector, usize)], l2: f64) -> f64 {
        let (loss, _, _) = batch_gradient(&self.bias, &self.rows, 1.0, batch, false);
        loss + 0.5 * l2 * squared_norm(&self.rows)
    }

    /// Gradient of [`SoftmaxModel::objective`] with respect to every bias and every
    /// stored weight row (plus rows touched by the batch).
    pub fn gradient(&self, batch: &[(FeatureVector, usize)], l2: f64) -> Gradient {
        let (_, mut rows, bias) = batch_gradient(&self.bias, &self.rows, 1.0, batch, true);
        let k = self.labels.len();
        for (f, w) in &self.rows {
            let g = rows.entry(*f).or_insert_with(|| vec![0.0; k]);
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi += l2 * wi;
            }
        }
        Gradient {
            bias,
            weights: rows.into_iter().collect(),
        }
    }
}

fn squared_norm(rows: &Rows) -> f64 {
    let mut sorted: Vec<_> = rows.iter().collect();
    sorted.sort_unstable_by_key(|r| *r.0);
    sorted
        .into_iter()
        .flat_map(|(_, r)| r.iter())
        .map(|w| w * w)
        .sum()
}

fn scores_scaled(bias: &[f64], rows: &Rows, scale: f64, features: &FeatureVector) -> Vec<f64> {
    let mut acc = vec![0.0; bias.len()];
    for &(f, x) in features.entries() {
        if let Some(row) = rows.get(&f) {
            for (a, w) in acc.iter_mut().zip(row) {
                *a += w * x;
            }
        }
    }
    acc.iter().zip(bias).map(|(a, b)| b + scale * a).collect()
}

/// Mean cross-entropy over the batch and (optionally) its data gradient, with
/// weights represented as `scale * rows`.
fn batch_gradient(
    bias: &[f64],
    rows: &Rows,
    scale: f64,
    batch: &[(FeatureVector, usize)],
    want_grad: bool,
) -> (f64, Rows, Vec<f64>) {
    let k = bias.len();
    let inv = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = Rows::default();
    let mut grad_bias = vec![0.0; k];
    for (x, y) in batch {
        let p = softmax(&scores_scaled(bias, rows, scale, x));
        loss -= p[*y].max(f64::MIN_POSITIVE).ln() * inv;
        if !want_grad {
            continue;
        }
        let residual: Vec<f64> = p
            .iter()
            .enumerate()
            .map(|(j, pj)| (pj - if j == *y { 1.0 } else { 0.0 }) * inv)
            .collect();
        for (g, r) in grad_bias.iter_mut().zip(&residual) {
            *g += r;
        }
        for &(f, xv) in x.entries() {
            let g = grad.entry(f).or_insert_with(|| vec![0.0; k]);
            for (gi, r) in g.iter_mut().zip(&residual) {
                *gi += r * xv;
            }
        }
    }
    (loss, grad, grad_bias)
}

/// Trains on already-marked instances. The label vocabulary is the sorted set of
/// observed labels.
pub fn train(
    data: &[(MarkedInstance, RelationLabel)],
    cfg: &TrainConfig,
) -> Result<SoftmaxModel, ClassifierError> {
    let vocab = LabelVocabulary::from_observed(data.iter().map(|(_, l)| l))?;
    train_with_vocabulary(data, vocab, cfg).map(|(m, _)| m)
}

/// Trains with an explicit label vocabulary and returns the full-data objective
/// after each epoch.
pub fn train_with_vocabulary(
    data: &[(MarkedInstance, RelationLabel)],
    vocab: LabelVocabulary,
    cfg: &TrainConfig,
) -> Result<(SoftmaxModel, Vec<f64>), ClassifierError> {
    cfg.validate()?;
    let Some((first, _)) = data.first() else {
        return Err(ClassifierError::Empty);
    };
    let scheme = first.scheme;
    if let Some((m, _)) = data.iter().find(|(m, _)| m.scheme != scheme) {
        return Err(ClassifierError::MixedSchemes(scheme, m.scheme));
    }
    let distinct: BTreeSet<&RelationLabel> = data.iter().map(|(_, l)| l).collect();
    if distinct.len() < 2 {
        return Err(ClassifierError::DegenerateLabels);
    }
    let examples: Vec<(FeatureVector, usize)> = data
        .iter()
        .map(|(m, l)| Ok((featurize(m, cfg), vocab.require(l)?)))
        .collect::<Result<_, LabelError>>()?;

    let mut model = SoftmaxModel::zeros(vocab, scheme, cfg.clone());
    let losses = sgd(&mut model, &examples, cfg);
    Ok((model, losses))
}

fn sgd(model: &mut SoftmaxModel, examples: &[(FeatureVector, usize)], cfg: &TrainConfig) -> Vec<f64> {
    let k = model.labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut batch: Vec<(FeatureVector, usize)> = Vec::with_capacity(cfg.batch_size);
    // W = scale * rows, so the L2 shrinkage is a single multiply per step.
    let mut scale = 1.0f64;
    let mut losses = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        // decay by epoch, not step, so small per-pair buckets get the same schedule
        let eta = cfg.learning_rate / (epoch as f64).sqrt();
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| examples[i].clone()));
            let (_, grad, grad_bias) =
                batch_gradient(&model.bias, &model.rows, scale, &batch, true);

            scale *= 1.0 - eta * cfg.l2;
            for (b, g) in model.bias.iter_mut().zip(&grad_bias) {
                *b -= eta * g;
            }
            let step_size = eta / scale;
            for (f, g) in grad {
                let row = model.rows.entry(f).or_insert_with(|| vec![0.0; k]);
                for (w, gi) in row.iter_mut().zip(&g) {
                    *w -= step_size * gi;
                }
            }
            if scale < 1e-9 {
                fold_scale(&mut model.rows, scale);
                scale = 1.0;
            }
        }
        let (loss, _, _) = batch_gradient(&model.bias, &model.rows, scale, examples, false);
        let norm = squared_norm(&model.rows) * scale * scale;
        losses.push(loss + 0.5 * cfg.l2 * norm);
    }
    fold_scale(&mut model.rows, scale);
    losses
}

fn fold_scale(rows: &mut Rows, scale: f64) {
    if scale == 1.0 {
        return;
    }
    for row in rows.values_mut() {
        for w in row.iter_mut() {
            *w *= scale;
        }
    }
}

/// Softmax prediction; the label with the highest probability wins, ties broken
/// by vocabulary order.
pub fn predict(model: &SoftmaxModel, marked: &MarkedInstance) -> Result<PredictionRecord, ClassifierError> {
    if marked.scheme != model.scheme {
        return Err(ClassifierError::SchemeMismatch {
            id: marked.id.clone(),
            model: model.scheme,
            instance: marked.scheme,
        });
    }
    let probs = model.probabilities(&featurize(marked, &model.config));
    let best = argmax(&probs);
    Ok(PredictionRecord {
        id: marked.id.clone(),
        label: model.labels.labels()[best].clone(),
        probabilities: Some(probs),
        gold: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntitySpan, EntityType, TokenizedInstance};
    use crate::markers::insert_markers;

    fn marked(id: &str, tokens: &[&str]) -> MarkedInstance {
        let inst = TokenizedInstance {
            id: id.into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            subj: EntitySpan::new(0, 1, EntityType::new("ORG").unwrap()),
            obj: EntitySpan::new(tokens.len() - 1, tokens.len(), EntityType::new("ORG").unwrap()),
            relation: None,
        };
        insert_markers(&inst, MarkerScheme::TypedPunct).unwrap()
    }

    fn vocab(names: &[&str]) -> LabelVocabulary {
        LabelVocabulary::new(names.iter().map(|n| RelationLabel::new(*n)), None).unwrap()
    }

    #[test]
    fn zero_model_is_uniform_and_picks_first() {
        let m = SoftmaxModel::zeros(vocab(&["a", "b", "c"]), MarkerScheme::TypedPunct, TrainConfig::default());
        let p = predict(&m, &marked("x", &["A", "owns", "B"])).unwrap();
        let probs = p.probabilities.unwrap();
        for q in &probs {
            assert!((q - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(p.label.as_str(), "a");
    }

    #[test]
    fn memorizes_two_instances() {
        let data = vec![
            (marked("1", &["A", "owns", "B"]), RelationLabel::new("owner_of")),
            (marked("2", &["C", "sued", "D"]), RelationLabel::new("litigant")),
        ];
        let model = train(&data, &TrainConfig::default()).unwrap();
        for (m, l) in &data {
            let p = predict(&model, m).unwrap();
            assert_eq!(&p.label, l);
            let i = model.labels().index_of(l).unwrap();
            assert!(p.probabilities.unwrap()[i] > 0.5);
        }
    }

    #[test]
    fn degenerate_and_mixed_rejected() {
        let one = vec![
            (marked("1", &["A", "x", "B"]), RelationLabel::new("r")),
            (marked("2", &["A", "y", "B"]), RelationLabel::new("r")),
        ];
        let err = train(&one, &TrainConfig::default()).unwrap_err();
        assert!(err.to_string().contains("degenerate label set"));

        let mut mixed = one.clone();
        mixed[1].1 = RelationLabel::new("s");
        mixed[1].0.scheme = MarkerScheme::None;
        assert!(matches!(train(&mixed, &TrainConfig::default()), Err(ClassifierError::MixedSchemes(..))));
        assert!(matches!(train(&[], &TrainConfig::default()), Err(ClassifierError::Empty)));
    }

    #[test]
    fn scheme_mismatch_on_predict() {
        let m = SoftmaxModel::zeros(vocab(&["a", "b"]), MarkerScheme::None, TrainConfig::default());
        assert!(matches!(
            predict(&m, &marked("x", &["A", "b", "C"])),
            Err(ClassifierError::SchemeMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { epochs: 0, ..ok.clone() },
            TrainConfig { learning_rate: 0.0, ..ok.clone() },
            TrainConfig { hash_dim: 1000, ..ok.clone() },
            TrainConfig { ngram_orders: vec![], ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn softmax_handles_large_scores() {
        let p = softmax(&[1000.0, 1000.0, -1000.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert!(p.iter().all(|x| x.is_finite()));
    }
}
