//! Sentence-level relation extraction toolkit.
//!
//! * [`corpus`]: instance schema, line-delimited ingestion, dataset statistics;
//! * [`markers`]: typed punctuation entity markers and the classical baselines;
//! * [`router`]: entity-type-pair partitioning and per-pair models;
//! * [`classifier`]: hashed n-gram softmax classifier, model artifacts, prediction files;
//! * [`eval`]: accuracy, NO_RELATION-excluded micro F1, per-class and strict F1, reports.

pub mod classifier;
pub mod corpus;
pub mod eval;
pub mod labels;
pub mod markers;
pub mod router;
pub mod synthetic;

pub use classifier::{predict, train, PredictionRecord, SoftmaxModel, TrainConfig};
pub use corpus::{EntitySpan, EntityType, RelationLabel, TokenizedInstance};
pub use labels::LabelVocabulary;
pub use markers::{insert_markers, MarkedInstance, MarkerScheme};
pub use router::{EntityPairKey, KeySet, Partition};
