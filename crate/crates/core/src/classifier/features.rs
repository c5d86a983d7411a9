//! Hashed n-gram featurization of marked sentences.

use std::hash::Hasher;

use fnv::FnvHasher;

use super::TrainConfig;
use crate::corpus::span_gap;
use crate::markers::MarkedInstance;
use crate::router::EntityPairKey;

/// Sparse binary feature vector in a hashed space of size `dim`.
/// Entries are sorted by index and deduplicated.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    dim: usize,
    entries: Vec<(u32, f64)>,
}

impl FeatureVector {
    /// Builds a vector from raw (index, weight) pairs. Duplicate indices are summed.
    pub fn from_entries(dim: usize, mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, w) in entries {
            debug_assert!((i as usize) < dim);
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += w,
                _ => merged.push((i, w)),
            }
        }
        FeatureVector { dim, entries: merged }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn hash_feature(name: &str, dim: usize) -> u32 {
    let mut h = FnvHasher::default();
    h.write(name.as_bytes());
    (h.finish() & (dim as u64 - 1)) as u32
}

/// Log-scale bucket of the token gap between the two entity spans.
pub fn distance_bucket(gap: usize) -> &'static str {
    match gap {
        0 => "0",
        1 => "1",
        2 => "2",
        3..=4 => "3-4",
        5..=8 => "5-8",
        9..=16 => "9-16",
        17..=32 => "17-32",
        _ => "33+",
    }
}

/// Token n-grams of the configured orders over the whole marked sequence, one
/// feature for the distance bucket, and one for the entity-type pair when the
/// scheme puts types into the text.
pub fn featurize(marked: &MarkedInstance, cfg: &TrainConfig) -> FeatureVector {
    let dim = cfg.hash_dim;
    let mut idx = Vec::with_capacity(marked.tokens.len() * cfg.ngram_orders.len() + 2);
    let mut name = String::new();
    for &n in &cfg.ngram_orders {
        if n == 0 || n > marked.tokens.len() {
            continue;
        }
        for window in marked.tokens.windows(n) {
            name.clear();
            name.push_str(&format!("{n}g"));
            for tok in window {
                name.push('\u{1f}');
                name.push_str(tok);
            }
            idx.push(hash_feature(&name, dim));
        }
    }
    let gap = span_gap(&marked.subj, &marked.obj);
    idx.push(hash_feature(&format!("dist\u{1f}{}", distance_bucket(gap)), dim));
    if marked.scheme.exposes_types() {
        let key = EntityPairKey::new(marked.subj.etype.clone(), marked.obj.etype.clone());
        idx.push(hash_feature(&format!("pair\u{1f}{key}"), dim));
    }
    idx.sort_unstable();
    idx.dedup();
    FeatureVector {
        dim,
        entries: idx.into_iter().map(|i| (i, 1.0)).collect(),
    }
}
