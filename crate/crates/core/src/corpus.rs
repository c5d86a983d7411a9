//! Instance schema, span-annotated dataset ingestion and dataset statistics.
//!
//! Input is line-delimited JSON, one flat record per line. Key names are
//! resolved through a [`FieldMapping`] so that differently shaped exports
//! (REFinD, TACRED-style dumps) can be read without preprocessing.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::router::EntityPairKey;

/// Sentinel name of the "no relation holds" label (matched case-insensitively).
pub const NO_RELATION: &str = "no_relation";

/// Default entity-type vocabulary: the eight types appearing in REFinD's pair keys.
pub const DEFAULT_ENTITY_TYPES: [&str; 8] =
    ["ORG", "GPE", "PERS", "TITLE", "DATE", "MONEY", "UNIV", "GOV_AGY"];

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing key \"{key}\"")]
    MissingKey { line: usize, key: String },
    #[error("line {line}: instance {id}: {violations}")]
    Invalid {
        line: usize,
        id: String,
        violations: Violations,
    },
    #[error("invalid entity type {0:?}: must be non-empty and contain no whitespace")]
    BadEntityType(String),
    #[error("invalid field mapping: {0}")]
    BadMapping(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("instance {0} has no gold relation")]
    Unlabeled(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Normalized entity type label, e.g. `ORG` or `GOV_AGY`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct EntityType(String);

impl EntityType {
    pub fn new(name: &str) -> Result<Self, CorpusError> {
        let trimmed = name.trim();
        if trimmed.is_empty() || trimmed.chars().any(char::is_whitespace) {
            return Err(CorpusError::BadEntityType(name.to_string()));
        }
        Ok(EntityType(trimmed.to_uppercase()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for EntityType {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        EntityType::new(&s)
    }
}

impl From<EntityType> for String {
    fn from(t: EntityType) -> String {
        t.0
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A relation label. Only the NO_RELATION sentinel is distinguished.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "String", into = "String")]
pub struct RelationLabel(String);

impl RelationLabel {
    pub fn new(name: impl Into<String>) -> Self {
        RelationLabel(name.into())
    }

    pub fn no_relation() -> Self {
        RelationLabel(NO_RELATION.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_no_relation(&self) -> bool {
        self.0.eq_ignore_ascii_case(NO_RELATION)
    }
}

impl From<String> for RelationLabel {
    fn from(s: String) -> Self {
        RelationLabel(s)
    }
}

impl From<&str> for RelationLabel {
    fn from(s: &str) -> Self {
        RelationLabel(s.to_string())
    }
}

impl From<RelationLabel> for String {
    fn from(l: RelationLabel) -> String {
        l.0
    }
}

impl fmt::Display for RelationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Half-open token interval `[start, end)` tagged with an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub etype: EntityType,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, etype: EntityType) -> Self {
        EntitySpan { start, end, etype }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

/// One sentence with its subject/object entity pair and (optionally) the gold relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj: EntitySpan,
    pub obj: EntitySpan,
    pub relation: Option<RelationLabel>,
}

impl TokenizedInstance {
    /// Tokens strictly between the two entity spans.
    pub fn entity_distance(&self) -> usize {
        span_gap(&self.subj, &self.obj)
    }
}

pub(crate) fn span_gap(a: &EntitySpan, b: &EntitySpan) -> usize {
    if a.end <= b.start {
        b.start - a.end
    } else {
        a.start.saturating_sub(b.end)
    }
}

/// A single broken invariant reported by [`validate_instance`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyTokens,
    EmptySpan { role: &'static str },
    SpanOutOfRange { role: &'static str },
    OverlappingSpans,
    UnknownEntityType { role: &'static str, etype: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyTokens => f.write_str("empty token sequence"),
            Violation::EmptySpan { role } => write!(f, "{role} empty span"),
            Violation::SpanOutOfRange { role } => write!(f, "{role} span out of range"),
            Violation::OverlappingSpans => f.write_str("overlapping spans"),
            Violation::UnknownEntityType { role, etype } => {
                write!(f, "{role} entity type {etype} not in vocabulary")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Violations(pub Vec<Violation>);

impl fmt::Display for Violations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Outcome of [`validate_instance`]; violations are data, not errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Violations(Violations),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok)
    }
}

/// Checks every structural invariant of an instance and reports all that fail.
pub fn validate_instance(inst: &TokenizedInstance) -> Verdict {
    let mut out = Vec::new();
    if inst.tokens.is_empty() {
        out.push(Violation::EmptyTokens);
    }
    let n = inst.tokens.len();
    for (role, span) in [("subj", &inst.subj), ("obj", &inst.obj)] {
        if span.start >= span.end {
            out.push(Violation::EmptySpan { role });
        }
        if span.start > n || span.end > n {
            out.push(Violation::SpanOutOfRange { role });
        }
    }
    if !inst.subj.is_empty() && !inst.obj.is_empty() && inst.subj.overlaps(&inst.obj) {
        out.push(Violation::OverlappingSpans);
    }
    if out.is_empty() {
        Verdict::Ok
    } else {
        Verdict::Violations(Violations(out))
    }
}

/// Configured entity-type vocabulary with optional spelling aliases
/// (e.g. `PERSON` → `PERS`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeVocabulary {
    pub types: BTreeSet<EntityType>,
    #[serde(default)]
    pub aliases: BTreeMap<String, EntityType>,
}

impl Default for TypeVocabulary {
    fn default() -> Self {
        TypeVocabulary {
            types: DEFAULT_ENTITY_TYPES
                .iter()
                .map(|t| EntityType(t.to_string()))
                .collect(),
            aliases: BTreeMap::new(),
        }
    }
}

impl TypeVocabulary {
    /// Normalizes `raw` and resolves aliases. Returns the type and whether it is known.
    pub fn resolve(&self, raw: &str) -> Result<(EntityType, bool), CorpusError> {
        let t = EntityType::new(raw)?;
        if let Some(target) = self.aliases.get(t.as_str()) {
            return Ok((target.clone(), true));
        }
        let known = self.types.contains(&t);
        Ok((t, known))
    }

    pub fn extend<I: IntoIterator<Item = EntityType>>(&mut self, more: I) {
        self.types.extend(more);
    }
}

/// Source key names for each instance field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapping {
    pub id: String,
    pub tokens: String,
    pub subj_start: String,
    pub subj_end: String,
    pub subj_type: String,
    pub obj_start: String,
    pub obj_end: String,
    pub obj_type: String,
    pub relation: String,
    /// Span ends in the source are inclusive (`end` names the last token).
    pub inclusive_end: bool,
}

impl Default for FieldMapping {
    fn default() -> Self {
        FieldMapping {
            id: "id".into(),
            tokens: "token".into(),
            subj_start: "e1_start".into(),
            subj_end: "e1_end".into(),
            subj_type: "e1_type".into(),
            obj_start: "e2_start".into(),
            obj_end: "e2_end".into(),
            obj_type: "e2_type".into(),
            relation: "rel_group".into(),
            inclusive_end: false,
        }
    }
}

impl FieldMapping {
    fn keys(&self) -> [&str; 9] {
        [
            &self.id,
            &self.tokens,
            &self.subj_start,
            &self.subj_end,
            &self.subj_type,
            &self.obj_start,
            &self.obj_end,
            &self.obj_type,
            &self.relation,
        ]
    }

    pub fn check(&self) -> Result<(), CorpusError> {
        let mut seen = HashSet::new();
        for key in self.keys() {
            if key.trim().is_empty() {
                return Err(CorpusError::BadMapping("empty source key".into()));
            }
            if !seen.insert(key) {
                return Err(CorpusError::BadMapping(format!(
                    "source key \"{key}\" mapped twice"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    #[default]
    Strict,
    Lenient,
}

#[derive(Debug, Clone, Default)]
pub struct ParseOptions {
    pub mapping: FieldMapping,
    pub mode: ParseMode,
    /// When set, types outside the vocabulary are violations; aliases are always applied.
    pub types: Option<TypeVocabulary>,
}

/// A record dropped in lenient mode.
#[derive(Debug, Clone)]
pub struct SkippedLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedDataset {
    pub instances: Vec<TokenizedInstance>,
    pub skipped: Vec<SkippedLine>,
    /// Extra per-record keys not covered by the mapping, in input order.
    pub extras: Vec<Map<String, Value>>,
}

/// Reads line-delimited records. Blank lines are ignored; line numbers are 1-based.
pub fn parse_dataset<R: BufRead>(
    source: R,
    opts: &ParseOptions,
) -> Result<ParsedDataset, CorpusError> {
    opts.mapping.check()?;
    let mut out = ParsedDataset::default();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line, line_no, opts) {
            Ok((inst, extra)) => {
                out.instances.push(inst);
                out.extras.push(extra);
            }
            Err(e) if opts.mode == ParseMode::Lenient && !matches!(e, CorpusError::Io(_)) => {
                out.skipped.push(SkippedLine {
                    line: line_no,
                    reason: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

fn parse_record(
    line: &str,
    line_no: usize,
    opts: &ParseOptions,
) -> Result<(TokenizedInstance, Map<String, Value>), CorpusError> {
    let malformed = |message: String| CorpusError::Malformed {
        line: line_no,
        message,
    };
    let value: Value = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
    let Value::Object(mut obj) = value else {
        return Err(malformed("record is not an object".into()));
    };
    let m = &opts.mapping;

    let mut take = |key: &str| {
        obj.remove(key).ok_or_else(|| CorpusError::MissingKey {
            line: line_no,
            key: key.to_string(),
        })
    };

    let id = match take(&m.id)? {
        Value::String(s) => s,
        Value::Number(n) => n.to_string(),
        other => return Err(malformed(format!("\"{}\" is not a string: {other}", m.id))),
    };
    let tokens = match take(&m.tokens)? {
        Value::Array(items) => items
            .into_iter()
            .map(|v| match v {
                Value::String(s) => Ok(s),
                other => Err(malformed(format!("non-string token {other}"))),
            })
            .collect::<Result<Vec<_>, _>>()?,
        _ => return Err(malformed(format!("\"{}\" is not an array", m.tokens))),
    };
    let index = |v: Value, key: &str| -> Result<usize, CorpusError> {
        v.as_u64()
            .map(|n| n as usize)
            .ok_or_else(|| malformed(format!("\"{key}\" is not a non-negative integer")))
    };
    let text = |v: Value, key: &str| -> Result<String, CorpusError> {
        match v {
            Value::String(s) => Ok(s),
            _ => Err(malformed(format!("\"{key}\" is not a string"))),
        }
    };

    let subj_start = index(take(&m.subj_start)?, &m.subj_start)?;
    let subj_end = index(take(&m.subj_end)?, &m.subj_end)?;
    let subj_type = text(take(&m.subj_type)?, &m.subj_type)?;
    let obj_start = index(take(&m.obj_start)?, &m.obj_start)?;
    let obj_end = index(take(&m.obj_end)?, &m.obj_end)?;
    let obj_type = text(take(&m.obj_type)?, &m.obj_type)?;
    let relation = match take(&m.relation) {
        Ok(Value::Null) | Err(_) => None,
        Ok(v) => Some(RelationLabel::new(text(v, &m.relation)?)),
    };

    let vocab_default = TypeVocabulary::default();
    let vocab = opts.types.as_ref().unwrap_or(&vocab_default);
    let (subj_etype, subj_known) = vocab
        .resolve(&subj_type)
        .map_err(|e| malformed(e.to_string()))?;
    let (obj_etype, obj_known) = vocab
        .resolve(&obj_type)
        .map_err(|e| malformed(e.to_string()))?;

    let bump = usize::from(m.inclusive_end);
    let inst = TokenizedInstance {
        id,
        tokens,
        subj: EntitySpan::new(subj_start, subj_end + bump, subj_etype),
        obj: EntitySpan::new(obj_start, obj_end + bump, obj_etype),
        relation,
    };

    let mut violations = match validate_instance(&inst) {
        Verdict::Ok => Vec::new(),
        Verdict::Violations(v) => v.0,
    };
    if opts.types.is_some() {
        if !subj_known {
            violations.push(Violation::UnknownEntityType {
                role: "subj",
                etype: inst.subj.etype.to_string(),
            });
        }
        if !obj_known {
            violations.push(Violation::UnknownEntityType {
                role: "obj",
                etype: inst.obj.etype.to_string(),
            });
        }
    }
    if !violations.is_empty() {
        return Err(CorpusError::Invalid {
            line: line_no,
            id: inst.id,
            violations: Violations(violations),
        });
    }
    Ok((inst, obj))
}

/// Renders one instance as a record under `mapping`, merging any `extra` keys.
pub fn instance_to_record(
    inst: &TokenizedInstance,
    mapping: &FieldMapping,
    extra: Option<&Map<String, Value>>,
) -> Map<String, Value> {
    let mut rec = extra.cloned().unwrap_or_default();
    let bump = usize::from(mapping.inclusive_end);
    rec.insert(mapping.id.clone(), Value::from(inst.id.clone()));
    rec.insert(mapping.tokens.clone(), Value::from(inst.tokens.clone()));
    rec.insert(mapping.subj_start.clone(), Value::from(inst.subj.start));
    rec.insert(mapping.subj_end.clone(), Value::from(inst.subj.end - bump));
    rec.insert(
        mapping.subj_type.clone(),
        Value::from(inst.subj.etype.as_str()),
    );
    rec.insert(mapping.obj_start.clone(), Value::from(inst.obj.start));
    rec.insert(mapping.obj_end.clone(), Value::from(inst.obj.end - bump));
    rec.insert(mapping.obj_type.clone(), Value::from(inst.obj.etype.as_str()));
    if let Some(rel) = &inst.relation {
        rec.insert(mapping.relation.clone(), Value::from(rel.as_str()));
    }
    rec
}

/// Serializes instances to the line-delimited interchange format.
pub fn serialize_dataset<W: std::io::Write>(
    instances: &[TokenizedInstance],
    mapping: &FieldMapping,
    mut out: W,
) -> std::io::Result<()> {
    for inst in instances {
        let rec = instance_to_record(inst, mapping, None);
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub instances: usize,
    pub relations: BTreeMap<RelationLabel, usize>,
    pub pairs: BTreeMap<EntityPairKey, usize>,
    pub no_relation_fraction: f64,
    pub mean_sentence_length: f64,
    pub mean_entity_distance: f64,
}

pub fn compute_stats(instances: &[TokenizedInstance]) -> Result<DatasetStats, CorpusError> {
    if instances.is_empty() {
        return Err(CorpusError::EmptyDataset);
    }
    let mut relations = BTreeMap::new();
    let mut pairs = BTreeMap::new();
    let mut no_rel = 0usize;
    let mut tokens = 0usize;
    let mut distance = 0usize;
    for inst in instances {
        let rel = inst
            .relation
            .as_ref()
            .ok_or_else(|| CorpusError::Unlabeled(inst.id.clone()))?;
        *relations.entry(rel.clone()).or_insert(0) += 1;
        *pairs.entry(EntityPairKey::of(inst)).or_insert(0) += 1;
        no_rel += usize::from(rel.is_no_relation());
        tokens += inst.tokens.len();
        distance += inst.entity_distance();
    }
    let n = instances.len() as f64;
    Ok(DatasetStats {
        instances: instances.len(),
        relations,
        pairs,
        no_relation_fraction: no_rel as f64 / n,
        mean_sentence_length: tokens as f64 / n,
        mean_entity_distance: distance as f64 / n,
    })
}
