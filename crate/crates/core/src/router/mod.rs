//! Entity-type-pair routing: partitions a dataset into per-pair tasks and
//! merges per-pair predictions back into dataset order.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::classifier::{ClassifierError, PredictionRecord};
use crate::corpus::{EntityType, TokenizedInstance};

mod routed;

pub use routed::{predict_routed, train_routed, RoutedModel};

/// The eight REFinD entity-type pairs, in the order they are usually reported.
pub const DEFAULT_PAIR_KEYS: [(&str, &str); 8] = [
    ("ORG", "GPE"),
    ("ORG", "ORG"),
    ("PERS", "TITLE"),
    ("ORG", "DATE"),
    ("PERS", "ORG"),
    ("ORG", "MONEY"),
    ("PERS", "UNIV"),
    ("PERS", "GOV_AGY"),
];

#[derive(Debug, Error)]
pub enum RouterError {
    #[error("duplicate prediction for id {0}")]
    DuplicatePrediction(String),
    #[error("missing prediction for id {0}")]
    MissingPrediction(String),
    #[error("prediction for id {0} not in the reference dataset")]
    UnknownId(String),
    #[error("invalid pair key {0:?}: expected SUBJ-OBJ")]
    BadKey(String),
    #[error("model for {key}: {source}")]
    Classifier {
        key: String,
        #[source]
        source: ClassifierError,
    },
}

/// Ordered (subject type, object type) routing key. Direction-sensitive.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityPairKey {
    pub subj: EntityType,
    pub obj: EntityType,
}

impl EntityPairKey {
    pub fn new(subj: EntityType, obj: EntityType) -> Self {
        EntityPairKey { subj, obj }
    }

    pub fn of(inst: &TokenizedInstance) -> Self {
        EntityPairKey::new(inst.subj.etype.clone(), inst.obj.etype.clone())
    }
}

/// Key of an instance, built from the subject type then the object type.
pub fn pair_key(inst: &TokenizedInstance) -> EntityPairKey {
    EntityPairKey::of(inst)
}

impl fmt::Display for EntityPairKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.subj, self.obj)
    }
}

impl FromStr for EntityPairKey {
    type Err = RouterError;

    /// Splits on the first hyphen; type names may contain underscores but not hyphens.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RouterError::BadKey(s.to_string());
        let (a, b) = s.trim().split_once('-').ok_or_else(bad)?;
        let subj = EntityType::new(a).map_err(|_| bad())?;
        let obj = EntityType::new(b).map_err(|_| bad())?;
        Ok(EntityPairKey::new(subj, obj))
    }
}

impl TryFrom<String> for EntityPairKey {
    type Error = RouterError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<EntityPairKey> for String {
    fn from(k: EntityPairKey) -> String {
        k.to_string()
    }
}

/// Ordered set of routed keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySet(Vec<EntityPairKey>);

impl KeySet {
    pub fn new(keys: impl IntoIterator<Item = EntityPairKey>) -> Self {
        let mut seen = HashSet::new();
        KeySet(keys.into_iter().filter(|k| seen.insert(k.clone())).collect())
    }

    pub fn keys(&self) -> &[EntityPairKey] {
        &self.0
    }

    pub fn contains(&self, key: &EntityPairKey) -> bool {
        self.0.contains(key)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn parse_list(s: &str) -> Result<Self, RouterError> {
        s.split(',')
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<_>, _>>()
            .map(KeySet::new)
    }
}

impl Default for KeySet {
    fn default() -> Self {
        KeySet::new(DEFAULT_PAIR_KEYS.iter().map(|(s, o)| {
            EntityPairKey::new(
                EntityType::new(s).expect("static type"),
                EntityType::new(o).expect("static type"),
            )
        }))
    }
}

/// Instances grouped by pair key. Only non-empty buckets are kept, in key-set order;
/// instances whose key is outside the key set land in `residual`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Partition {
    pub buckets: Vec<(EntityPairKey, Vec<TokenizedInstance>)>,
    pub residual: Vec<TokenizedInstance>,
}

impl Partition {
    pub fn len(&self) -> usize {
        self.buckets.iter().map(|(_, b)| b.len()).sum::<usize>() + self.residual.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bucket(&self, key: &EntityPairKey) -> Option<&[TokenizedInstance]> {
        self.buckets
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, b)| b.as_slice())
    }

    /// Key → count, buckets first then residual keys in first-seen order.
    pub fn census(&self) -> Vec<(EntityPairKey, usize, bool)> {
        let mut rows: Vec<_> = self
            .buckets
            .iter()
            .map(|(k, b)| (k.clone(), b.len(), false))
            .collect();
        let mut residual: Vec<(EntityPairKey, usize, bool)> = Vec::new();
        for inst in &self.residual {
            let key = pair_key(inst);
            match residual.iter_mut().find(|(k, _, _)| *k == key) {
                Some(row) => row.1 += 1,
                None => residual.push((key, 1, true)),
            }
        }
        rows.extend(residual);
        rows
    }
}

pub fn partition_dataset(instances: &[TokenizedInstance], keyset: &KeySet) -> Partition {
    let mut slots: Vec<Vec<TokenizedInstance>> = vec![Vec::new(); keyset.len()];
    let mut residual = Vec::new();
    for inst in instances {
        let key = pair_key(inst);
        match keyset.keys().iter().position(|k| *k == key) {
            Some(i) => slots[i].push(inst.clone()),
            None => residual.push(inst.clone()),
        }
    }
    let buckets = keyset
        .keys()
        .iter()
        .cloned()
        .zip(slots)
        .filter(|(_, b)| !b.is_empty())
        .collect();
    Partition { buckets, residual }
}

/// Flattens per-bucket predictions and restores `reference` order.
///
/// Every reference id must be predicted exactly once and no prediction may name an
/// id outside the reference.
pub fn merge_predictions<K>(
    per_bucket: impl IntoIterator<Item = (K, Vec<PredictionRecord>)>,
    reference: &[String],
) -> Result<Vec<PredictionRecord>, RouterError> {
    let position: HashMap<&str, usize> = reference
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    let mut slots: Vec<Option<PredictionRecord>> = vec![None; reference.len()];
    for (_, records) in per_bucket {
        for rec in records {
            let &i = position
                .get(rec.id.as_str())
                .ok_or_else(|| RouterError::UnknownId(rec.id.clone()))?;
            if slots[i].is_some() {
                return Err(RouterError::DuplicatePrediction(rec.id));
            }
            slots[i] = Some(rec);
        }
    }
    slots
        .into_iter()
        .zip(reference)
        .map(|(slot, id)| slot.ok_or_else(|| RouterError::MissingPrediction(id.clone())))
        .collect()
}
