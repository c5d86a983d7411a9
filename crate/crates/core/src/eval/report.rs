//! Comparison tables: one row per model (or per entity pair) with micro F1 and
//! accuracy, an optional baseline column, and an optional class × model F1 grid.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{accuracy, confusion, micro_f1, per_class_f1, EvalError, Score};
use crate::classifier::{ExternalScoreFile, PredictionRecord};
use crate::corpus::{RelationLabel, TokenizedInstance};
use crate::labels::LabelVocabulary;
use crate::router::{EntityPairKey, Partition};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub micro_f1: Score,
    pub accuracy: Score,
    /// Externally reported F1 for the same row, when supplied.
    pub baseline: Option<f64>,
    pub instances: usize,
}

/// Per-class F1 values: `values[class][column]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGrid {
    pub classes: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<Score>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub title: String,
    /// Header of the first column ("Model", "Entity Pair").
    pub row_header: String,
    pub rows: Vec<ComparisonRow>,
    pub per_class: Option<ClassGrid>,
}

impl ModelComparison {
    pub fn new(title: &str, row_header: &str) -> Self {
        ModelComparison {
            title: title.to_string(),
            row_header: row_header.to_string(),
            rows: Vec::new(),
            per_class: None,
        }
    }

    pub fn push_row(&mut self, name: &str, micro_f1: Score, accuracy: Score) -> &mut ComparisonRow {
        self.rows.push(ComparisonRow {
            name: name.to_string(),
            micro_f1,
            accuracy,
            baseline: None,
            instances: 0,
        });
        self.rows.last_mut().expect("just pushed")
    }

    pub fn row(&self, name: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    fn has_baseline(&self) -> bool {
        self.rows.iter().any(|r| r.baseline.is_some())
    }

    /// Aligned plain-text table. Metric columns use `decimals` places.
    pub fn render_text(&self, decimals: usize) -> String {
        let mut header = vec![self.row_header.clone(), "Micro F1".into(), "Accuracy".into()];
        if self.has_baseline() {
            header.push("Baseline F1".into());
        }
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut cells = vec![
                    r.name.clone(),
                    r.micro_f1.render(decimals),
                    r.accuracy.render(decimals),
                ];
                if self.has_baseline() {
                    cells.push(r.baseline.map_or("-".into(), |b| format!("{b:.decimals$}")));
                }
                cells
            })
            .collect();
        let mut out = String::new();
        if !self.title.is_empty() {
            out.push_str(&self.title);
            out.push('\n');
        }
        out.push_str(&align(&header, &body));
        if let Some(grid) = &self.per_class {
            out.push('\n');
            out.push_str(&grid.render_text(decimals));
        }
        out
    }

    /// Rows in LaTeX tabular form, e.g. `XLNET-Base & 0.75 & 0.79 \\`.
    pub fn render_latex_rows(&self, decimals: usize) -> String {
        self.rows
            .iter()
            .map(|r| {
                let mut cells = vec![
                    r.name.clone(),
                    r.micro_f1.render(decimals),
                    r.accuracy.render(decimals),
                ];
                if let Some(b) = r.baseline {
                    cells.push(format!("{b:.decimals$}"));
                }
                format!("{} \\\\\n", cells.join(" & "))
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("comparison serializes")
    }
}

impl ClassGrid {
    pub fn render_text(&self, decimals: usize) -> String {
        let mut header = vec!["Class".to_string()];
        header.extend(self.columns.iter().cloned());
        let body: Vec<Vec<String>> = self
            .classes
            .iter()
            .zip(&self.values)
            .map(|(c, vals)| {
                let mut cells = vec![c.clone()];
                cells.extend(vals.iter().map(|v| v.render(decimals)));
                cells
            })
            .collect();
        align(&header, &body)
    }

    /// Replaces class names with `Class 0`, `Class 1`, ….
    pub fn indexed(mut self) -> Self {
        self.classes = (0..self.classes.len()).map(|i| format!("Class {i}")).collect();
        self
    }
}

fn align(header: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if i == 0 {
                s.push_str(&format!("{c:<w$}"));
            } else {
                s.push_str(&format!("  {c:>w$}"));
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut out = line(header);
    let rule: usize = widths.iter().sum::<usize>() + 2 * widths.len().saturating_sub(1);
    out.push_str(&"-".repeat(rule));
    out.push('\n');
    for row in body {
        out.push_str(&line(row));
    }
    out
}

fn row_metrics(
    gold: &[RelationLabel],
    pred: &[RelationLabel],
    vocab: &LabelVocabulary,
    no_relation: &RelationLabel,
) -> Result<(Score, Score), EvalError> {
    if gold.is_empty() {
        return Ok((Score::Undefined, Score::Undefined));
    }
    let cm = confusion(gold, pred, vocab)?;
    Ok((micro_f1(&cm, no_relation)?, Score::Defined(accuracy(&cm)?)))
}

fn gold_label(inst: &TokenizedInstance) -> Result<&RelationLabel, EvalError> {
    inst.relation
        .as_ref()
        .ok_or_else(|| EvalError::Unlabeled(inst.id.clone()))
}

/// One row per source with micro F1 and accuracy against `gold`, plus the class ×
/// model F1 grid. Every source must cover every gold instance.
pub fn compare_models(
    sources: &[ExternalScoreFile],
    gold: &[TokenizedInstance],
    vocab: &LabelVocabulary,
    no_relation: &RelationLabel,
) -> Result<ModelComparison, EvalError> {
    let gold_labels: Vec<RelationLabel> = gold
        .iter()
        .map(|i| gold_label(i).cloned())
        .collect::<Result<_, _>>()?;
    let mut table = ModelComparison::new("Scores across models", "Model");
    let mut columns = Vec::with_capacity(sources.len());
    for src in sources {
        let by_id: HashMap<&str, &PredictionRecord> =
            src.records.iter().map(|r| (r.id.as_str(), r)).collect();
        let pred: Vec<RelationLabel> = gold
            .iter()
            .map(|g| {
                by_id
                    .get(g.id.as_str())
                    .map(|r| r.label.clone())
                    .ok_or_else(|| EvalError::CoverageGap {
                        source_name: src.name.clone(),
                        id: g.id.clone(),
                    })
            })
            .collect::<Result<_, _>>()?;
        let (f1, acc) = row_metrics(&gold_labels, &pred, vocab, no_relation)?;
        table.push_row(&src.name, f1, acc).instances = gold.len();
        let per_class = if gold.is_empty() {
            vec![Score::Undefined; vocab.len()]
        } else {
            per_class_f1(&confusion(&gold_labels, &pred, vocab)?)
                .into_iter()
                .map(|c| Score::Defined(c.f1))
                .collect()
        };
        columns.push(per_class);
    }
    table.per_class = Some(ClassGrid {
        classes: vocab.labels().iter().map(|l| l.to_string()).collect(),
        columns: sources.iter().map(|s| s.name.clone()).collect(),
        values: (0..vocab.len())
            .map(|c| columns.iter().map(|col| col[c]).collect())
            .collect(),
    });
    Ok(table)
}

/// Per entity-pair micro F1 and accuracy, with an optional baseline F1 column.
/// Residual instances (keys outside the routed set) form a final `residual` row.
pub fn per_pair_report(
    partition: &Partition,
    predictions: &[PredictionRecord],
    vocab: &LabelVocabulary,
    no_relation: &RelationLabel,
    baselines: &[(EntityPairKey, f64)],
) -> Result<ModelComparison, EvalError> {
    let by_id: HashMap<&str, &PredictionRecord> =
        predictions.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut table = ModelComparison::new("Scores per entity pair", "Entity Pair");
    let mut groups: Vec<(String, Option<&EntityPairKey>, &[TokenizedInstance])> = partition
        .buckets
        .iter()
        .map(|(k, b)| (k.to_string(), Some(k), b.as_slice()))
        .collect();
    if !partition.residual.is_empty() {
        groups.push(("residual".into(), None, partition.residual.as_slice()));
    }
    for (name, key, instances) in groups {
        let mut gold = Vec::with_capacity(instances.len());
        let mut pred = Vec::with_capacity(instances.len());
        for inst in instances {
            gold.push(gold_label(inst)?.clone());
            let rec = by_id
                .get(inst.id.as_str())
                .ok_or_else(|| EvalError::MissingPrediction(inst.id.clone()))?;
            pred.push(rec.label.clone());
        }
        let (f1, acc) = row_metrics(&gold, &pred, vocab, no_relation)?;
        let row = table.push_row(&name, f1, acc);
        row.instances = instances.len();
        row.baseline = key.and_then(|k| baselines.iter().find(|(b, _)| b == k).map(|(_, v)| *v));
    }
    Ok(table)
}

/// Reads `pair-key<TAB>baseline-F1` lines. Blank lines and `#` comments are skipped.
pub fn read_baselines<R: BufRead>(source: R) -> Result<Vec<(EntityPairKey, f64)>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |message: String| EvalError::Baseline {
            line: i + 1,
            message,
        };
        let (k, v) = trimmed
            .split_once('\t')
            .ok_or_else(|| bad("expected pair-key<TAB>baseline-F1".into()))?;
        let key: EntityPairKey = k.parse().map_err(|e| bad(format!("{e}")))?;
        let value: f64 = v
            .trim()
            .parse()
            .ok()
            .filter(|x: &f64| (0.0..=1.0).contains(x))
            .ok_or_else(|| bad(format!("invalid F1 value {v:?}")))?;
        out.push((key, value));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntitySpan, EntityType};
    use crate::router::{partition_dataset, KeySet};

    fn inst(id: &str, s: &str, o: &str, rel: &str) -> TokenizedInstance {
        TokenizedInstance {
            id: id.into(),
            tokens: vec!["a".into(), "b".into(), "c".into()],
            subj: EntitySpan::new(0, 1, EntityType::new(s).unwrap()),
            obj: EntitySpan::new(2, 3, EntityType::new(o).unwrap()),
            relation: Some(rel.into()),
        }
    }

    fn vocab() -> LabelVocabulary {
        LabelVocabulary::read("!no_relation\nr1\nr2\n".as_bytes()).unwrap()
    }

    fn no() -> RelationLabel {
        RelationLabel::no_relation()
    }

    fn source(name: &str, labels: &[(&str, &str)]) -> ExternalScoreFile {
        ExternalScoreFile {
            name: name.into(),
            records: labels
                .iter()
                .map(|(id, l)| PredictionRecord::new(*id, (*l).into()))
                .collect(),
        }
    }

    #[test]
    fn canned_row_renders_like_table() {
        let mut t = ModelComparison::new("", "Model");
        t.push_row("XLNET-Base", Score::Defined(0.75), Score::Defined(0.79));
        let text = t.render_text(2);
        let row = text.lines().find(|l| l.starts_with("XLNET-Base")).unwrap();
        assert_eq!(row.split_whitespace().collect::<Vec<_>>(), ["XLNET-Base", "0.75", "0.79"]);
        assert_eq!(t.render_latex_rows(2), "XLNET-Base & 0.75 & 0.79 \\\\\n");
    }

    #[test]
    fn undefined_renders_na() {
        let mut t = ModelComparison::new("", "Model");
        t.push_row("m", Score::Undefined, Score::Defined(1.0));
        assert!(t.render_text(2).contains("n/a"));
        assert_eq!(t.to_json()["rows"][0]["micro_f1"], serde_json::Value::Null);
    }

    #[test]
    fn coverage_gap_named() {
        let gold = vec![inst("a", "ORG", "ORG", "r1"), inst("b", "ORG", "ORG", "r2")];
        let src = source("BERT-Base", &[("a", "r1")]);
        match compare_models(&[src], &gold, &vocab(), &no()) {
            Err(EvalError::CoverageGap { source_name, id }) => {
                assert_eq!((source_name.as_str(), id.as_str()), ("BERT-Base", "b"))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn identical_sources_identical_rows() {
        let gold = vec![inst("a", "ORG", "ORG", "r1"), inst("b", "ORG", "ORG", "no_relation")];
        let s1 = source("m1", &[("a", "r1"), ("b", "r1")]);
        let s2 = source("m2", &[("b", "r1"), ("a", "r1")]);
        let t = compare_models(&[s1, s2], &gold, &vocab(), &no()).unwrap();
        assert_eq!(t.rows[0].micro_f1, t.rows[1].micro_f1);
        assert_eq!(t.rows[0].accuracy, t.rows[1].accuracy);
        let grid = t.per_class.unwrap();
        assert_eq!(grid.columns, ["m1", "m2"]);
        assert_eq!(grid.classes.len(), 3);
        assert!(grid.clone().indexed().render_text(2).contains("Class 2"));
    }

    #[test]
    fn pair_rows_and_baseline() {
        let data = vec![
            inst("1", "ORG", "DATE", "r1"),
            inst("2", "ORG", "DATE", "r2"),
            inst("3", "PERS", "ORG", "r1"),
            inst("4", "DATE", "ORG", "no_relation"),
        ];
        let p = partition_dataset(&data, &KeySet::default());
        let preds = vec![
            PredictionRecord::new("1", "r1".into()),
            PredictionRecord::new("2", "r2".into()),
            PredictionRecord::new("3", "r2".into()),
            PredictionRecord::new("4", "no_relation".into()),
        ];
        let baselines = read_baselines("ORG-DATE\t0.81\n# comment\n".as_bytes()).unwrap();
        let t = per_pair_report(&p, &preds, &vocab(), &no(), &baselines).unwrap();
        let names: Vec<_> = t.rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["ORG-DATE", "PERS-ORG", "residual"]);
        assert_eq!(t.rows[0].micro_f1, Score::Defined(1.0));
        assert_eq!(t.rows[0].baseline, Some(0.81));
        assert_eq!(t.rows[1].accuracy, Score::Defined(0.0));
        assert_eq!(t.rows[2].micro_f1, Score::Undefined);
        let text = t.render_text(2);
        let row = text.lines().find(|l| l.starts_with("ORG-DATE")).unwrap();
        assert_eq!(row.split_whitespace().collect::<Vec<_>>(), ["ORG-DATE", "1.00", "1.00", "0.81"]);

        let missing = &preds[..3];
        assert!(matches!(
            per_pair_report(&p, missing, &vocab(), &no(), &[]),
            Err(EvalError::MissingPrediction(id)) if id == "4"
        ));
    }

    #[test]
    fn baseline_parse_errors() {
        assert!(read_baselines("ORG-DATE 0.81\n".as_bytes()).is_err());
        assert!(read_baselines("ORG-DATE\t1.5\n".as_bytes()).is_err());
    }
}
