//! One classifier per entity-type pair plus a global fallback model.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{EntityPairKey, KeySet, RouterError};
use crate::classifier::{
    argmax, predict, train_with_vocabulary, ClassifierError, PredictionRecord, SoftmaxModel,
    TrainConfig,
};
use crate::corpus::RelationLabel;
use crate::labels::LabelVocabulary;
use crate::markers::{MarkedInstance, MarkerScheme};

/// Independent per-pair models. Instances whose key is outside the key set, or
/// whose key had no training data, go to `fallback`, which is trained on all data.
#[derive(Debug, Clone, PartialEq)]
pub struct RoutedModel {
    keyset: KeySet,
    models: Vec<(EntityPairKey, SoftmaxModel)>,
    fallback: SoftmaxModel,
}

impl RoutedModel {
    pub(crate) fn from_parts(
        keyset: KeySet,
        models: Vec<(EntityPairKey, SoftmaxModel)>,
        fallback: SoftmaxModel,
    ) -> Self {
        RoutedModel {
            keyset,
            models,
            fallback,
        }
    }

    pub fn keyset(&self) -> &KeySet {
        &self.keyset
    }

    pub fn pair_models(&self) -> &[(EntityPairKey, SoftmaxModel)] {
        &self.models
    }

    pub fn fallback(&self) -> &SoftmaxModel {
        &self.fallback
    }

    /// The global label vocabulary; routed probabilities are reported in this order.
    pub fn labels(&self) -> &LabelVocabulary {
        self.fallback.labels()
    }

    pub fn scheme(&self) -> MarkerScheme {
        self.fallback.scheme()
    }

    pub fn model_for(&self, key: &EntityPairKey) -> &SoftmaxModel {
        if !self.keyset.contains(key) {
            return &self.fallback;
        }
        self.models
            .iter()
            .find(|(k, _)| k == key)
            .map_or(&self.fallback, |(_, m)| m)
    }
}

fn key_of(m: &MarkedInstance) -> EntityPairKey {
    EntityPairKey::new(m.subj.etype.clone(), m.obj.etype.clone())
}

/// A model that always predicts its only label.
fn constant_model(label: &RelationLabel, vocab: &LabelVocabulary, scheme: MarkerScheme, cfg: &TrainConfig) -> SoftmaxModel {
    let keep: BTreeSet<RelationLabel> = std::iter::once(label.clone()).collect();
    SoftmaxModel::zeros(vocab.restrict(&keep), scheme, cfg.clone())
}

fn train_bucket(
    data: &[(MarkedInstance, RelationLabel)],
    vocab: &LabelVocabulary,
    cfg: &TrainConfig,
) -> Result<SoftmaxModel, ClassifierError> {
    let present: BTreeSet<RelationLabel> = data.iter().map(|(_, l)| l.clone()).collect();
    match present.len() {
        0 => Err(ClassifierError::Empty),
        1 => {
            for l in &present {
                vocab.require(l)?;
            }
            let only = present.iter().next().expect("one label");
            Ok(constant_model(only, vocab, data[0].0.scheme, cfg))
        }
        _ => train_with_vocabulary(data, vocab.restrict(&present), cfg).map(|(m, _)| m),
    }
}

/// Trains one model per non-empty key bucket plus the fallback, running at most
/// `jobs` trainings at once. Results do not depend on `jobs`.
pub fn train_routed(
    data: &[(MarkedInstance, RelationLabel)],
    keyset: &KeySet,
    vocab: &LabelVocabulary,
    cfg: &TrainConfig,
    jobs: usize,
) -> Result<RoutedModel, RouterError> {
    let mut buckets: Vec<(EntityPairKey, Vec<(MarkedInstance, RelationLabel)>)> = keyset
        .keys()
        .iter()
        .map(|k| (k.clone(), Vec::new()))
        .collect();
    for item in data {
        let key = key_of(&item.0);
        if let Some((_, b)) = buckets.iter_mut().find(|(k, _)| *k == key) {
            b.push(item.clone());
        }
    }
    buckets.retain(|(_, b)| !b.is_empty());

    // Task 0 is the fallback; task i+1 is bucket i.
    let tasks = buckets.len() + 1;
    let results: Mutex<Vec<Option<Result<SoftmaxModel, RouterError>>>> =
        Mutex::new((0..tasks).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let run = |task: usize| -> Result<SoftmaxModel, RouterError> {
        let (name, slice) = if task == 0 {
            ("fallback".to_string(), data)
        } else {
            let (k, b) = &buckets[task - 1];
            (k.to_string(), b.as_slice())
        };
        train_bucket(slice, vocab, cfg).map_err(|source| RouterError::Classifier { key: name, source })
    };
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, tasks) {
            scope.spawn(|| loop {
                let task = next.fetch_add(1, Ordering::SeqCst);
                if task >= tasks {
                    break;
                }
                let out = run(task);
                results.lock().expect("poisoned")[task] = Some(out);
            });
        }
    });

    let mut results = results.into_inner().expect("poisoned").into_iter();
    let fallback = results.next().flatten().expect("fallback trained")?;
    let mut models = Vec::with_capacity(buckets.len());
    for ((key, _), res) in buckets.into_iter().zip(results) {
        models.push((key, res.expect("bucket trained")?));
    }
    Ok(RoutedModel {
        keyset: keyset.clone(),
        models,
        fallback,
    })
}

/// Routes by entity-type pair and reports probabilities over the global vocabulary
/// (zero for labels the pair model never saw).
pub fn predict_routed(model: &RoutedModel, marked: &MarkedInstance) -> Result<PredictionRecord, RouterError> {
    let key = key_of(marked);
    let sub = model.model_for(&key);
    let mut rec = predict(sub, marked).map_err(|source| RouterError::Classifier {
        key: key.to_string(),
        source,
    })?;
    let global = model.labels();
    if let Some(local) = rec.probabilities.take() {
        let mut probs = vec![0.0; global.len()];
        for (l, p) in sub.labels().labels().iter().zip(local) {
            let i = global.index_of(l).expect("pair vocabulary is a subset of the global one");
            probs[i] = p;
        }
        debug_assert_eq!(global.labels()[argmax(&probs)], rec.label);
        rec.probabilities = Some(probs);
    }
    Ok(rec)
}
