//! Prediction TSV files: `id<TAB>label[<TAB>p_0 ... p_{k-1}]` with a header row.
//! Probability columns follow the order of a declared label vocabulary.

use std::collections::HashSet;
use std::io::{BufRead, Write};

use thiserror::Error;

use super::{argmax, PredictionRecord};
use crate::corpus::RelationLabel;
use crate::labels::LabelVocabulary;

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("row {row}: malformed prediction row: {message}")]
    Malformed { row: usize, message: String },
    #[error("row {row}: unknown label {label:?}")]
    UnknownLabel { row: usize, label: String },
    #[error("row {row}: duplicate prediction id {id}")]
    DuplicateId { row: usize, id: String },
    #[error("missing or invalid header: expected \"id<TAB>label[<TAB>p_0..p_{{k-1}}]\", found {0:?}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Predictions from one named source (a fine-tuned model, or this toolkit).
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalScoreFile {
    pub name: String,
    pub records: Vec<PredictionRecord>,
}

pub fn load_external_predictions<R: BufRead>(
    source: R,
    name: &str,
    vocab: &LabelVocabulary,
) -> Result<ExternalScoreFile, ExternalError> {
    Ok(ExternalScoreFile {
        name: name.to_string(),
        records: read_predictions(source, vocab)?,
    })
}

/// Parses a prediction TSV. Rows are numbered by file line (the header is row 1).
pub fn read_predictions<R: BufRead>(
    source: R,
    vocab: &LabelVocabulary,
) -> Result<Vec<PredictionRecord>, ExternalError> {
    let mut lines = source.lines().enumerate();
    let with_probs = loop {
        let Some((_, line)) = lines.next() else {
            return Err(ExternalError::Header(String::new()));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        break parse_header(&line, vocab.len())?;
    };

    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in lines {
        let row = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| ExternalError::Malformed { row, message };
        let cols: Vec<&str> = line.split('\t').collect();
        let expected = if with_probs { 2 + vocab.len() } else { 2 };
        if cols.len() != expected {
            return Err(malformed(format!("expected {expected} columns, found {}", cols.len())));
        }
        let id = cols[0].trim();
        if id.is_empty() {
            return Err(malformed("empty id".into()));
        }
        let label = RelationLabel::new(cols[1].trim());
        let Some(li) = vocab.index_of(&label) else {
            return Err(ExternalError::UnknownLabel {
                row,
                label: label.to_string(),
            });
        };
        let probabilities = if with_probs {
            let probs = cols[2..]
                .iter()
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|p| p.is_finite() && (0.0..=1.0).contains(p))
                        .ok_or_else(|| malformed(format!("invalid probability {c:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if probs[li] < probs[argmax(&probs)] {
                return Err(malformed(format!(
                    "label {label} is not the highest-probability class"
                )));
            }
            Some(probs)
        } else {
            None
        };
        if !seen.insert(id.to_string()) {
            return Err(ExternalError::DuplicateId {
                row,
                id: id.to_string(),
            });
        }
        out.push(PredictionRecord {
            id: id.to_string(),
            label,
            probabilities,
            gold: None,
        });
    }
    Ok(out)
}

fn parse_header(line: &str, k: usize) -> Result<bool, ExternalError> {
    let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
    let bad = || ExternalError::Header(line.to_string());
    if cols.len() < 2 || cols[0] != "id" || cols[1] != "label" {
        return Err(bad());
    }
    if cols.len() == 2 {
        return Ok(false);
    }
    if cols.len() != 2 + k {
        return Err(bad());
    }
    for (j, c) in cols[2..].iter().enumerate() {
        if *c != format!("p_{j}") {
            return Err(bad());
        }
    }
    Ok(true)
}

/// Writes a prediction TSV. Probability columns are written only when a vocabulary
/// is given and every record carries a vector of matching length.
pub fn write_predictions<W: Write>(
    records: &[PredictionRecord],
    vocab: Option<&LabelVocabulary>,
    mut out: W,
) -> std::io::Result<()> {
    let k = vocab.map(LabelVocabulary::len);
    let with_probs = k.is_some_and(|k| {
        records
            .iter()
            .all(|r| r.probabilities.as_ref().is_some_and(|p| p.len() == k))
    });
    write!(out, "id\tlabel")?;
    if with_probs {
        for j in 0..k.unwrap_or(0) {
            write!(out, "\tp_{j}")?;
        }
    }
    writeln!(out)?;
    for r in records {
        write!(out, "{}\t{}", r.id, r.label)?;
        if with_probs {
            for p in r.probabilities.as_deref().unwrap_or_default() {
                write!(out, "\t{p}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> LabelVocabulary {
        LabelVocabulary::read("!no_relation\nemployee_of\nfounder_of\n".as_bytes()).unwrap()
    }

    #[test]
    fn three_rows() {
        let text = "id\tlabel\na\temployee_of\nb\tno_relation\nc\tfounder_of\n";
        let f = load_external_predictions(text.as_bytes(), "XLNET-Base", &vocab()).unwrap();
        assert_eq!(f.name, "XLNET-Base");
        assert_eq!(f.records.len(), 3);
        assert_eq!(f.records[2].label.as_str(), "founder_of");
    }

    #[test]
    fn with_probabilities() {
        let text = "id\tlabel\tp_0\tp_1\tp_2\na\temployee_of\t0.2\t0.7\t0.1\n";
        let recs = read_predictions(text.as_bytes(), &vocab()).unwrap();
        assert_eq!(recs[0].probabilities.as_deref(), Some(&[0.2, 0.7, 0.1][..]));
    }

    #[test]
    fn probability_argmax_must_match() {
        let text = "id\tlabel\tp_0\tp_1\tp_2\na\tfounder_of\t0.2\t0.7\t0.1\n";
        let err = read_predictions(text.as_bytes(), &vocab()).unwrap_err();
        assert!(matches!(err, ExternalError::Malformed { row: 2, .. }));
    }

    #[test]
    fn duplicate_id() {
        let text = "id\tlabel\na\temployee_of\na\tfounder_of\n";
        let err = read_predictions(text.as_bytes(), &vocab()).unwrap_err();
        assert!(err.to_string().contains("duplicate prediction id"));
    }

    #[test]
    fn unknown_label_names_label_and_row() {
        let text = "id\tlabel\na\temployee_of\nb\tceo_of\n";
        let err = read_predictions(text.as_bytes(), &vocab()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("ceo_of") && msg.contains("row 3"), "{msg}");
    }

    #[test]
    fn malformed_row_number() {
        let text = "id\tlabel\na\temployee_of\nb\n";
        let err = read_predictions(text.as_bytes(), &vocab()).unwrap_err();
        assert!(matches!(err, ExternalError::Malformed { row: 3, .. }));
    }

    #[test]
    fn header_required() {
        let err = read_predictions("a\temployee_of\n".as_bytes(), &vocab()).unwrap_err();
        assert!(matches!(err, ExternalError::Header(_)));
    }

    #[test]
    fn write_then_read() {
        let v = vocab();
        let mut r = PredictionRecord::new("a", "founder_of".into());
        r.probabilities = Some(vec![0.1, 0.2, 0.7]);
        let mut buf = Vec::new();
        write_predictions(&[r.clone()], Some(&v), &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "id\tlabel\tp_0\tp_1\tp_2\na\tfounder_of\t0.1\t0.2\t0.7\n"
        );
        assert_eq!(read_predictions(buf.as_slice(), &v).unwrap(), vec![r]);
    }
}
