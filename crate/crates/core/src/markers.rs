//! Entity marker schemes.
//!
//! [`MarkerScheme::TypedPunct`] encloses the subject as `@ * type * SUBJ @` and the
//! object as `# ^ type ^ OBJ #`. Every glyph and the lowercased type label are
//! separate tokens. The classical baselines are also provided: `[E1] … [/E1]`
//! entity markers and `[SUBJ-TYPE]` masks.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{validate_instance, EntitySpan, TokenizedInstance, Verdict, Violations};

pub const SUBJ_BOUNDARY: &str = "@";
pub const SUBJ_TYPE_FENCE: &str = "*";
pub const OBJ_BOUNDARY: &str = "#";
pub const OBJ_TYPE_FENCE: &str = "^";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MarkerError {
    #[error("marker collision in instance {id}: {detail}")]
    Collision { id: String, detail: String },
    #[error("instance {id} is invalid: {violations}")]
    Invalid { id: String, violations: Violations },
    #[error("insertion at {position} falls strictly inside span [{start}, {end})")]
    InsideSpan {
        position: usize,
        start: usize,
        end: usize,
    },
    #[error("unknown marker scheme {0:?} (expected typed-punct, entity-marker, entity-mask or none)")]
    UnknownScheme(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MarkerScheme {
    #[default]
    TypedPunct,
    EntityMarker,
    EntityMask,
    None,
}

impl MarkerScheme {
    pub const ALL: [MarkerScheme; 4] = [
        MarkerScheme::TypedPunct,
        MarkerScheme::EntityMarker,
        MarkerScheme::EntityMask,
        MarkerScheme::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MarkerScheme::TypedPunct => "typed-punct",
            MarkerScheme::EntityMarker => "entity-marker",
            MarkerScheme::EntityMask => "entity-mask",
            MarkerScheme::None => "none",
        }
    }

    /// Whether the marked token sequence carries the entity types.
    pub fn exposes_types(self) -> bool {
        matches!(self, MarkerScheme::TypedPunct | MarkerScheme::EntityMask)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            MarkerScheme::TypedPunct => 0,
            MarkerScheme::EntityMarker => 1,
            MarkerScheme::EntityMask => 2,
            MarkerScheme::None => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        MarkerScheme::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for MarkerScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MarkerScheme {
    type Err = MarkerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('_', "-");
        MarkerScheme::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| MarkerError::UnknownScheme(s.to_string()))
    }
}

/// Token sequence after marker insertion. The spans select the entity surface
/// tokens (or the single mask token for [`MarkerScheme::EntityMask`]).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkedInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub subj: EntitySpan,
    pub obj: EntitySpan,
    pub scheme: MarkerScheme,
}

impl MarkedInstance {
    /// Wraps tokens that were already marked elsewhere (e.g. a preprocessed file).
    pub fn premarked(inst: &TokenizedInstance, scheme: MarkerScheme) -> Self {
        MarkedInstance {
            id: inst.id.clone(),
            tokens: inst.tokens.clone(),
            subj: inst.subj.clone(),
            obj: inst.obj.clone(),
            scheme,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Subj,
    Obj,
}

fn opening(scheme: MarkerScheme, role: Role, span: &EntitySpan) -> Vec<String> {
    let ty = span.etype.as_str().to_lowercase();
    match (scheme, role) {
        (MarkerScheme::TypedPunct, Role::Subj) => {
            vec![SUBJ_BOUNDARY.into(), SUBJ_TYPE_FENCE.into(), ty, SUBJ_TYPE_FENCE.into()]
        }
        (MarkerScheme::TypedPunct, Role::Obj) => {
            vec![OBJ_BOUNDARY.into(), OBJ_TYPE_FENCE.into(), ty, OBJ_TYPE_FENCE.into()]
        }
        (MarkerScheme::EntityMarker, Role::Subj) => vec!["[E1]".into()],
        (MarkerScheme::EntityMarker, Role::Obj) => vec!["[E2]".into()],
        _ => Vec::new(),
    }
}

fn closing(scheme: MarkerScheme, role: Role) -> Vec<String> {
    match (scheme, role) {
        (MarkerScheme::TypedPunct, Role::Subj) => vec![SUBJ_BOUNDARY.into()],
        (MarkerScheme::TypedPunct, Role::Obj) => vec![OBJ_BOUNDARY.into()],
        (MarkerScheme::EntityMarker, Role::Subj) => vec!["[/E1]".into()],
        (MarkerScheme::EntityMarker, Role::Obj) => vec!["[/E2]".into()],
        _ => Vec::new(),
    }
}

fn mask_token(role: Role, span: &EntitySpan) -> String {
    match role {
        Role::Subj => format!("[SUBJ-{}]", span.etype),
        Role::Obj => format!("[OBJ-{}]", span.etype),
    }
}

fn is_marker_token(scheme: MarkerScheme, tok: &str) -> bool {
    match scheme {
        MarkerScheme::TypedPunct => {
            matches!(tok, SUBJ_BOUNDARY | OBJ_BOUNDARY | SUBJ_TYPE_FENCE | OBJ_TYPE_FENCE)
        }
        MarkerScheme::EntityMarker => matches!(tok, "[E1]" | "[/E1]" | "[E2]" | "[/E2]"),
        MarkerScheme::EntityMask => {
            (tok.starts_with("[SUBJ-") || tok.starts_with("[OBJ-")) && tok.ends_with(']')
        }
        MarkerScheme::None => false,
    }
}

/// Detects marker tokens inside an entity span, or a span already enclosed by the
/// scheme's own opening/closing runs.
fn check_collision(inst: &TokenizedInstance, scheme: MarkerScheme) -> Result<(), MarkerError> {
    if scheme == MarkerScheme::None {
        return Ok(());
    }
    for (role, span, name) in [(Role::Subj, &inst.subj, "subject"), (Role::Obj, &inst.obj, "object")] {
        if let Some(tok) = inst.tokens[span.start..span.end]
            .iter()
            .find(|t| is_marker_token(scheme, t))
        {
            return Err(MarkerError::Collision {
                id: inst.id.clone(),
                detail: format!("{name} span contains marker token {tok:?}"),
            });
        }
        let open = opening(scheme, role, span);
        let close = closing(scheme, role);
        if open.is_empty() {
            continue;
        }
        let before = span
            .start
            .checked_sub(open.len())
            .map(|s| &inst.tokens[s..span.start]);
        let after = inst.tokens.get(span.end..span.end + close.len());
        if before == Some(open.as_slice()) && after == Some(close.as_slice()) {
            return Err(MarkerError::Collision {
                id: inst.id.clone(),
                detail: format!("{name} span is already marked"),
            });
        }
    }
    Ok(())
}

/// Applies `scheme` to a validated instance.
pub fn insert_markers(
    inst: &TokenizedInstance,
    scheme: MarkerScheme,
) -> Result<MarkedInstance, MarkerError> {
    if let Verdict::Violations(violations) = validate_instance(inst) {
        if violations
            .0
            .iter()
            .any(|v| matches!(v, crate::corpus::Violation::OverlappingSpans))
        {
            return Err(MarkerError::Collision {
                id: inst.id.clone(),
                detail: "subject and object spans overlap".into(),
            });
        }
        return Err(MarkerError::Invalid {
            id: inst.id.clone(),
            violations,
        });
    }
    check_collision(inst, scheme)?;

    match scheme {
        MarkerScheme::None => Ok(MarkedInstance::premarked(inst, scheme)),
        MarkerScheme::EntityMask => Ok(apply_mask(inst)),
        MarkerScheme::TypedPunct | MarkerScheme::EntityMarker => Ok(apply_enclosing(inst, scheme)),
    }
}

fn apply_enclosing(inst: &TokenizedInstance, scheme: MarkerScheme) -> MarkedInstance {
    // (position, rank, tokens): at equal positions a closing run precedes an opening run
    // so that adjacent spans nest back to back.
    let mut runs: Vec<(usize, u8, Vec<String>)> = vec![
        (inst.subj.start, 1, opening(scheme, Role::Subj, &inst.subj)),
        (inst.subj.end, 0, closing(scheme, Role::Subj)),
        (inst.obj.start, 1, opening(scheme, Role::Obj, &inst.obj)),
        (inst.obj.end, 0, closing(scheme, Role::Obj)),
    ];
    // Later positions are spliced first so earlier indices stay valid.
    runs.sort_by(|a, b| (b.0, b.1).cmp(&(a.0, a.1)));
    let mut tokens = inst.tokens.clone();
    for (pos, _, run) in &runs {
        tokens.splice(*pos..*pos, run.iter().cloned());
    }

    runs.reverse();
    let insertions: Vec<(usize, usize)> = runs.iter().map(|(p, _, r)| (*p, r.len())).collect();
    let subj = remap_span(&inst.subj, &insertions).expect("markers never split a valid span");
    let obj = remap_span(&inst.obj, &insertions).expect("markers never split a valid span");
    MarkedInstance {
        id: inst.id.clone(),
        tokens,
        subj,
        obj,
        scheme,
    }
}

fn apply_mask(inst: &TokenizedInstance) -> MarkedInstance {
    let mut tokens = Vec::with_capacity(inst.tokens.len());
    let (mut subj_at, mut obj_at) = (0, 0);
    let mut i = 0;
    while i < inst.tokens.len() {
        if i == inst.subj.start {
            subj_at = tokens.len();
            tokens.push(mask_token(Role::Subj, &inst.subj));
            i = inst.subj.end;
        } else if i == inst.obj.start {
            obj_at = tokens.len();
            tokens.push(mask_token(Role::Obj, &inst.obj));
            i = inst.obj.end;
        } else {
            tokens.push(inst.tokens[i].clone());
            i += 1;
        }
    }
    MarkedInstance {
        id: inst.id.clone(),
        tokens,
        subj: EntitySpan::new(subj_at, subj_at + 1, inst.subj.etype.clone()),
        obj: EntitySpan::new(obj_at, obj_at + 1, inst.obj.etype.clone()),
        scheme: MarkerScheme::EntityMask,
    }
}

/// Maps `original` through insertions given as `(position, width)` pairs, where each
/// position indexes the pre-insertion sequence and the run is placed before that
/// token. Insertions at the span end land after the span.
pub fn remap_span(
    original: &EntitySpan,
    insertions: &[(usize, usize)],
) -> Result<EntitySpan, MarkerError> {
    let mut shift = 0;
    for &(position, width) in insertions {
        if position > original.start && position < original.end {
            return Err(MarkerError::InsideSpan {
                position,
                start: original.start,
                end: original.end,
            });
        }
        if position <= original.start {
            shift += width;
        }
    }
    Ok(EntitySpan::new(
        original.start + shift,
        original.end + shift,
        original.etype.clone(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::EntityType;

    fn span(s: usize, e: usize, t: &str) -> EntitySpan {
        EntitySpan::new(s, e, EntityType::new(t).unwrap())
    }

    fn inst(tokens: &[&str], subj: EntitySpan, obj: EntitySpan) -> TokenizedInstance {
        TokenizedInstance {
            id: "x".into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            subj,
            obj,
            relation: None,
        }
    }

    fn musk() -> TokenizedInstance {
        inst(&["Musk", "founded", "SpaceX"], span(0, 1, "PERS"), span(2, 3, "ORG"))
    }

    #[test]
    fn typed_punct_worked_example() {
        let m = insert_markers(&musk(), MarkerScheme::TypedPunct).unwrap();
        assert_eq!(
            m.tokens,
            ["@", "*", "pers", "*", "Musk", "@", "founded", "#", "^", "org", "^", "SpaceX", "#"]
        );
        assert_eq!(&m.tokens[m.subj.start..m.subj.end], ["Musk"]);
        assert_eq!(&m.tokens[m.obj.start..m.obj.end], ["SpaceX"]);
    }

    #[test]
    fn typed_punct_object_first() {
        let i = inst(&["SpaceX", "hired", "Musk"], span(2, 3, "PERS"), span(0, 1, "ORG"));
        let m = insert_markers(&i, MarkerScheme::TypedPunct).unwrap();
        assert_eq!(
            m.tokens,
            ["#", "^", "org", "^", "SpaceX", "#", "hired", "@", "*", "pers", "*", "Musk", "@"]
        );
        assert_eq!((m.subj.start, m.subj.end), (11, 12));
        assert_eq!((m.obj.start, m.obj.end), (4, 5));
    }

    #[test]
    fn none_is_identity() {
        let m = insert_markers(&musk(), MarkerScheme::None).unwrap();
        assert_eq!(m.tokens, musk().tokens);
        assert_eq!(m.subj, musk().subj);
    }

    #[test]
    fn entity_mask() {
        let m = insert_markers(&musk(), MarkerScheme::EntityMask).unwrap();
        assert_eq!(m.tokens, ["[SUBJ-PERS]", "founded", "[OBJ-ORG]"]);
        assert_eq!((m.subj.start, m.obj.start), (0, 2));
    }

    #[test]
    fn entity_marker() {
        let m = insert_markers(&musk(), MarkerScheme::EntityMarker).unwrap();
        assert_eq!(m.tokens, ["[E1]", "Musk", "[/E1]", "founded", "[E2]", "SpaceX", "[/E2]"]);
    }

    #[test]
    fn adjacent_spans_nest_back_to_back() {
        let i = inst(&["Acme", "Corp", "CEO"], span(0, 2, "ORG"), span(2, 3, "TITLE"));
        let m = insert_markers(&i, MarkerScheme::TypedPunct).unwrap();
        assert_eq!(
            m.tokens,
            ["@", "*", "org", "*", "Acme", "Corp", "@", "#", "^", "title", "^", "CEO", "#"]
        );
        assert_eq!(&m.tokens[m.obj.start..m.obj.end], ["CEO"]);
    }

    #[test]
    fn overlap_is_collision() {
        let i = inst(&["a", "b", "c", "d"], span(1, 3, "ORG"), span(2, 4, "ORG"));
        let err = insert_markers(&i, MarkerScheme::TypedPunct).unwrap_err();
        assert!(err.to_string().contains("marker collision"));
    }

    #[test]
    fn double_marking_rejected() {
        let once = insert_markers(&musk(), MarkerScheme::TypedPunct).unwrap();
        let again = inst(
            &once.tokens.iter().map(String::as_str).collect::<Vec<_>>(),
            once.subj.clone(),
            once.obj.clone(),
        );
        let err = insert_markers(&again, MarkerScheme::TypedPunct).unwrap_err();
        assert!(matches!(err, MarkerError::Collision { .. }));

        let inside = inst(&["@", "x", "y"], span(0, 2, "ORG"), span(2, 3, "ORG"));
        assert!(insert_markers(&inside, MarkerScheme::TypedPunct).is_err());
        assert!(insert_markers(&inside, MarkerScheme::None).is_ok());
    }

    #[test]
    fn remap_examples() {
        let t = |s, e| span(s, e, "ORG");
        assert_eq!(remap_span(&t(2, 3), &[(0, 4)]).unwrap(), t(6, 7));
        assert_eq!(remap_span(&t(0, 1), &[(2, 2)]).unwrap(), t(0, 1));
        assert_eq!(remap_span(&t(1, 3), &[(1, 2), (3, 1)]).unwrap(), t(3, 5));
        assert!(remap_span(&t(1, 3), &[(2, 1)]).is_err());
    }

    #[test]
    fn scheme_names_parse() {
        for s in MarkerScheme::ALL {
            assert_eq!(s.name().parse::<MarkerScheme>().unwrap(), s);
            assert_eq!(MarkerScheme::from_code(s.code()), Some(s));
        }
        assert_eq!("TYPED_PUNCT".parse::<MarkerScheme>().unwrap(), MarkerScheme::TypedPunct);
        assert!("bogus".parse::<MarkerScheme>().is_err());
    }
}
