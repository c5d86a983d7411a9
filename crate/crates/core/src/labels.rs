//! Ordered relation-label vocabularies.
//!
//! On disk a vocabulary is one label per line; the NO_RELATION sentinel is flagged
//! with a leading `!`.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::corpus::RelationLabel;

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("duplicate label {0:?} in vocabulary")]
    Duplicate(String),
    #[error("more than one NO_RELATION sentinel: {0:?} and {1:?}")]
    TwoSentinels(String, String),
    #[error("empty label on line {0}")]
    Empty(usize),
    #[error("unknown label {0:?}")]
    Unknown(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    labels: Vec<RelationLabel>,
    no_relation: Option<usize>,
    index: HashMap<RelationLabel, usize>,
}

impl LabelVocabulary {
    /// Builds a vocabulary in the given order. The sentinel is the label matching
    /// `no_relation` case-insensitively.
    pub fn new(
        labels: impl IntoIterator<Item = RelationLabel>,
        no_relation: Option<&RelationLabel>,
    ) -> Result<Self, LabelError> {
        let labels: Vec<RelationLabel> = labels.into_iter().collect();
        let mut index = HashMap::with_capacity(labels.len());
        let mut sentinel: Option<usize> = None;
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(LabelError::Duplicate(l.to_string()));
            }
            let is_sentinel = match no_relation {
                Some(s) => l.as_str().eq_ignore_ascii_case(s.as_str()),
                None => false,
            };
            if is_sentinel {
                if let Some(prev) = sentinel {
                    return Err(LabelError::TwoSentinels(
                        labels[prev].to_string(),
                        l.to_string(),
                    ));
                }
                sentinel = Some(i);
            }
        }
        Ok(LabelVocabulary {
            labels,
            no_relation: sentinel,
            index,
        })
    }

    /// Sorted vocabulary of the distinct labels, using the default sentinel.
    pub fn from_observed<'a>(labels: impl IntoIterator<Item = &'a RelationLabel>) -> Result<Self, LabelError> {
        let set: BTreeSet<RelationLabel> = labels.into_iter().cloned().collect();
        LabelVocabulary::new(set, Some(&RelationLabel::no_relation()))
    }

    pub fn labels(&self) -> &[RelationLabel] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&RelationLabel> {
        self.labels.get(i)
    }

    pub fn index_of(&self, label: &RelationLabel) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn require(&self, label: &RelationLabel) -> Result<usize, LabelError> {
        self.index_of(label)
            .ok_or_else(|| LabelError::Unknown(label.to_string()))
    }

    pub fn no_relation_index(&self) -> Option<usize> {
        self.no_relation
    }

    pub fn no_relation(&self) -> Option<&RelationLabel> {
        self.no_relation.map(|i| &self.labels[i])
    }

    /// Restricts to the labels in `keep`, preserving this vocabulary's order.
    pub fn restrict(&self, keep: &BTreeSet<RelationLabel>) -> LabelVocabulary {
        let sentinel = self.no_relation().cloned();
        LabelVocabulary::new(
            self.labels.iter().filter(|l| keep.contains(*l)).cloned(),
            sentinel.as_ref(),
        )
        .expect("subset of a valid vocabulary")
    }

    pub fn read<R: BufRead>(source: R) -> Result<Self, LabelError> {
        let mut labels = Vec::new();
        let mut sentinel = None;
        for (i, line) in source.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (flagged, name) = match line.strip_prefix('!') {
                Some(rest) => (true, rest.trim()),
                None => (false, line),
            };
            if name.is_empty() {
                return Err(LabelError::Empty(i + 1));
            }
            let label = RelationLabel::new(name);
            if flagged {
                if let Some(prev) = &sentinel {
                    return Err(LabelError::TwoSentinels(format!("{prev}"), name.to_string()));
                }
                sentinel = Some(label.clone());
            }
            labels.push(label);
        }
        LabelVocabulary::new(labels, sentinel.as_ref())
    }

    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, l) in self.labels.iter().enumerate() {
            if Some(i) == self.no_relation {
                writeln!(out, "!{l}")?;
            } else {
                writeln!(out, "{l}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_with_sentinel() {
        let text = "employee_of\n!NA\nfounder_of\n";
        let v = LabelVocabulary::read(text.as_bytes()).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.no_relation().unwrap().as_str(), "NA");
        let mut buf = Vec::new();
        v.write(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn observed_is_sorted_and_flags_default_sentinel() {
        let ls: Vec<RelationLabel> = ["b", "NO_RELATION", "a", "b"].iter().map(|s| (*s).into()).collect();
        let v = LabelVocabulary::from_observed(&ls).unwrap();
        let names: Vec<_> = v.labels().iter().map(|l| l.as_str()).collect();
        assert_eq!(names, vec!["NO_RELATION", "a", "b"]);
        assert_eq!(v.no_relation_index(), Some(0));
    }

    #[test]
    fn two_sentinels_rejected() {
        let ls: Vec<RelationLabel> = ["no_relation", "NO_RELATION"].iter().map(|s| (*s).into()).collect();
        assert!(matches!(
            LabelVocabulary::new(ls, Some(&RelationLabel::no_relation())),
            Err(LabelError::TwoSentinels(..))
        ));
        assert!(LabelVocabulary::read("!a\n!b\n".as_bytes()).is_err());
    }

    #[test]
    fn duplicates_rejected() {
        assert!(LabelVocabulary::read("a\na\n".as_bytes()).is_err());
    }
}
