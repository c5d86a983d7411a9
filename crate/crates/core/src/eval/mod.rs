//! Relation-extraction metrics.
//!
//! * accuracy over all instances;
//! * micro F1 with NO_RELATION excluded as a positive class (TACRED convention);
//! * one-vs-rest F1 per label;
//! * strict F1: instances where NO_RELATION is correctly predicted are removed,
//!   and the rest is scored as all-classes micro F1 (equal to accuracy on the
//!   filtered set).
//!
//! Metrics that have no defined value are [`Score::Undefined`], never zero.

mod report;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{
    compare_models, per_pair_report, read_baselines, ClassGrid, ComparisonRow, ModelComparison,
};

use crate::corpus::RelationLabel;
use crate::labels::LabelVocabulary;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("gold and predicted sequences differ in length ({gold} vs {pred})")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("label {0:?} is not in the label vocabulary")]
    UnknownLabel(String),
    #[error("cannot score an empty set of instances")]
    Empty,
    #[error("missing prediction for instance {0}")]
    MissingPrediction(String),
    #[error("source {source_name} has no prediction for instance {id}")]
    CoverageGap { source_name: String, id: String },
    #[error("instance {0} has no gold relation")]
    Unlabeled(String),
    #[error("baseline file line {line}: {message}")]
    Baseline { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A metric value, or UNDEFINED when its denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "Option<f64>", into = "Option<f64>")]
pub enum Score {
    Defined(f64),
    Undefined,
}

impl Score {
    pub fn value(self) -> Option<f64> {
        match self {
            Score::Defined(v) => Some(v),
            Score::Undefined => None,
        }
    }

    pub fn is_defined(self) -> bool {
        matches!(self, Score::Defined(_))
    }

    /// Fixed-precision rendering; UNDEFINED renders as `n/a`.
    pub fn render(self, decimals: usize) -> String {
        match self {
            Score::Defined(v) => format!("{v:.decimals$}"),
            Score::Undefined => "n/a".to_string(),
        }
    }
}

impl From<Option<f64>> for Score {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Score::Undefined, Score::Defined)
    }
}

impl From<Score> for Option<f64> {
    fn from(s: Score) -> Self {
        s.value()
    }
}

impl fmt::Display for Score {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self, f.precision()) {
            (Score::Defined(v), Some(p)) => write!(f, "{v:.p$}"),
            (Score::Defined(v), None) => write!(f, "{v}"),
            (Score::Undefined, _) => f.write_str("n/a"),
        }
    }
}

/// Gold × predicted counts over a label vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    labels: LabelVocabulary,
    counts: Vec<Vec<u64>>,
    total: u64,
}

impl ConfusionMatrix {
    pub fn labels(&self) -> &LabelVocabulary {
        &self.labels
    }

    pub fn count(&self, gold: usize, pred: usize) -> u64 {
        self.counts[gold][pred]
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    fn gold_total(&self, label: usize) -> u64 {
        self.counts[label].iter().sum()
    }

    fn pred_total(&self, label: usize) -> u64 {
        self.counts.iter().map(|row| row[label]).sum()
    }
}

/// Builds the confusion matrix; every label must be in `vocab`.
pub fn confusion(
    gold: &[RelationLabel],
    pred: &[RelationLabel],
    vocab: &LabelVocabulary,
) -> Result<ConfusionMatrix, EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let k = vocab.len();
    let mut counts = vec![vec![0u64; k]; k];
    let idx = |l: &RelationLabel| {
        vocab
            .index_of(l)
            .ok_or_else(|| EvalError::UnknownLabel(l.to_string()))
    };
    for (g, p) in gold.iter().zip(pred) {
        counts[idx(g)?][idx(p)?] += 1;
    }
    Ok(ConfusionMatrix {
        labels: vocab.clone(),
        counts,
        total: gold.len() as u64,
    })
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, EvalError> {
    if cm.total == 0 {
        return Err(EvalError::Empty);
    }
    Ok(cm.trace() as f64 / cm.total as f64)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Index of `no_relation` in the matrix vocabulary, matched case-insensitively.
fn sentinel_index(cm: &ConfusionMatrix, no_relation: &RelationLabel) -> Option<usize> {
    cm.labels.index_of(no_relation).or_else(|| {
        cm.labels
            .labels()
            .iter()
            .position(|l| l.as_str().eq_ignore_ascii_case(no_relation.as_str()))
    })
}

/// Micro precision, recall and F1 with `no_relation` excluded as a positive class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `None` when there is neither a non-NO gold label nor a non-NO prediction.
pub fn micro_scores(
    cm: &ConfusionMatrix,
    no_relation: &RelationLabel,
) -> Result<Option<MicroScores>, EvalError> {
    if cm.total == 0 {
        return Err(EvalError::Empty);
    }
    let no = sentinel_index(cm, no_relation);
    let k = cm.counts.len();
    let positives = (0..k).filter(|&i| Some(i) != no);
    let (mut correct, mut guessed, mut gold) = (0u64, 0u64, 0u64);
    for i in positives {
        correct += cm.counts[i][i];
        guessed += cm.pred_total(i);
        gold += cm.gold_total(i);
    }
    if guessed == 0 && gold == 0 {
        return Ok(None);
    }
    let precision = ratio(correct, guessed);
    let recall = ratio(correct, gold);
    Ok(Some(MicroScores {
        precision,
        recall,
        f1: harmonic(precision, recall),
    }))
}

pub fn micro_f1(cm: &ConfusionMatrix, no_relation: &RelationLabel) -> Result<Score, EvalError> {
    Ok(micro_scores(cm, no_relation)?.map(|m| m.f1).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub label: RelationLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of gold instances of this label.
    pub support: u64,
    /// The label never occurs in gold or predictions; its F1 is reported as 0.
    pub zero_support: bool,
}

/// One-vs-rest scores for every vocabulary label, in vocabulary order.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<ClassScore> {
    cm.labels
        .labels()
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let tp = cm.counts[i][i];
            let gold = cm.gold_total(i);
            let pred = cm.pred_total(i);
            let precision = ratio(tp, pred);
            let recall = ratio(tp, gold);
            ClassScore {
                label: label.clone(),
                precision,
                recall,
                f1: harmonic(precision, recall),
                support: gold,
                zero_support: gold == 0 && pred == 0,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrictMode {
    /// All-classes micro F1 (accuracy) on the filtered set.
    #[default]
    FilteredAccuracy,
    /// NO-excluded micro F1 on the filtered set (equal to plain micro F1).
    NoExcludedMicro,
}

/// Strict F1: drops every instance with gold = pred = `no_relation`, then scores the
/// remainder. Returns the score and the number of instances dropped.
pub fn strict_f1_with(
    gold: &[RelationLabel],
    pred: &[RelationLabel],
    no_relation: &RelationLabel,
    mode: StrictMode,
) -> Result<(Score, usize), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let is_no = |l: &RelationLabel| l.as_str().eq_ignore_ascii_case(no_relation.as_str());
    let kept: Vec<(&RelationLabel, &RelationLabel)> = gold
        .iter()
        .zip(pred)
        .filter(|(g, p)| !(is_no(g) && is_no(p)))
        .collect();
    let dropped = gold.len() - kept.len();
    if kept.is_empty() {
        return Ok((Score::Undefined, dropped));
    }
    let score = match mode {
        StrictMode::FilteredAccuracy => {
            let correct = kept.iter().filter(|(g, p)| g == p).count();
            Score::Defined(correct as f64 / kept.len() as f64)
        }
        StrictMode::NoExcludedMicro => {
            let (mut correct, mut guessed, mut golds) = (0u64, 0u64, 0u64);
            for (g, p) in &kept {
                guessed += u64::from(!is_no(p));
                golds += u64::from(!is_no(g));
                correct += u64::from(!is_no(g) && g == p);
            }
            if guessed == 0 && golds == 0 {
                Score::Undefined
            } else {
                Score::Defined(harmonic(ratio(correct, guessed), ratio(correct, golds)))
            }
        }
    };
    Ok((score, dropped))
}

pub fn strict_f1(
    gold: &[RelationLabel],
    pred: &[RelationLabel],
    no_relation: &RelationLabel,
) -> Result<Score, EvalError> {
    strict_f1_with(gold, pred, no_relation, StrictMode::default()).map(|(s, _)| s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    pub accuracy: f64,
    pub micro_precision: Score,
    pub micro_recall: Score,
    pub micro_f1: Score,
    pub strict_f1: Score,
    pub strict_mode: StrictMode,
    /// Instances removed by the strict filter (correct NO_RELATION predictions).
    pub filtered_out: usize,
    pub per_class: Vec<ClassScore>,
}

/// Every metric for one (gold, pred) pair of label sequences.
pub fn evaluate(
    gold: &[RelationLabel],
    pred: &[RelationLabel],
    vocab: &LabelVocabulary,
    no_relation: &RelationLabel,
    mode: StrictMode,
) -> Result<EvalReport, EvalError> {
    let cm = confusion(gold, pred, vocab)?;
    let acc = accuracy(&cm)?;
    let micro = micro_scores(&cm, no_relation)?;
    let (strict, filtered_out) = strict_f1_with(gold, pred, no_relation, mode)?;
    Ok(EvalReport {
        instances: gold.len(),
        accuracy: acc,
        micro_precision: micro.map(|m| m.precision).into(),
        micro_recall: micro.map(|m| m.recall).into(),
        micro_f1: micro.map(|m| m.f1).into(),
        strict_f1: strict,
        strict_mode: mode,
        filtered_out,
        per_class: per_class_f1(&cm),
    })
}

impl EvalReport {
    pub fn render_text(&self, decimals: usize) -> String {
        let mut out = String::new();
        let d = decimals;
        out.push_str(&format!("instances        {}\n", self.instances));
        out.push_str(&format!("accuracy         {:.d$}\n", self.accuracy));
        out.push_str(&format!("micro precision  {}\n", self.micro_precision.render(d)));
        out.push_str(&format!("micro recall     {}\n", self.micro_recall.render(d)));
        out.push_str(&format!("micro F1         {}\n", self.micro_f1.render(d)));
        out.push_str(&format!(
            "strict F1        {}  (filtered out {})\n",
            self.strict_f1.render(d),
            self.filtered_out
        ));
        let width = self
            .per_class
            .iter()
            .map(|c| c.label.as_str().len())
            .max()
            .unwrap_or(5)
            .max(5);
        out.push_str(&format!("\n{:<width$}  {:>8}  {:>7}\n", "class", "F1", "support"));
        for c in &self.per_class {
            let flag = if c.zero_support { "  (zero support)" } else { "" };
            out.push_str(&format!(
                "{:<width$}  {:>8.d$}  {:>7}{flag}\n",
                c.label.as_str(),
                c.f1,
                c.support
            ));
        }
        out
    }
}
