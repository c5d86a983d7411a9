//! Binary model artifacts.
//!
//! Layout (little-endian): 8-byte magic, `u32` format version, `u8` artifact kind,
//! body, trailing CRC-32 over everything before it. Strings are `u32`
//! length-prefixed UTF-8.

use std::io::{Read, Write};

use thiserror::Error;

use super::{SoftmaxModel, TrainConfig};
use crate::corpus::RelationLabel;
use crate::labels::LabelVocabulary;
use crate::markers::MarkerScheme;
use crate::router::{EntityPairKey, KeySet, RoutedModel};

pub const MAGIC: &[u8; 8] = b"RELMARK\0";
pub const FORMAT_VERSION: u32 = 1;

const KIND_SINGLE: u8 = 0;
const KIND_ROUTED: u8 = 1;
const HEADER_LEN: usize = 8 + 4 + 1;
const NO_SENTINEL: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("not a model artifact (bad magic bytes)")]
    BadMagic,
    #[error("unsupported artifact format version {found} (this build reads version {supported})")]
    Version { found: u32, supported: u32 },
    #[error("checksum mismatch: artifact is truncated or corrupted")]
    Checksum,
    #[error("corrupted payload: {0}")]
    Corrupt(String),
    #[error("expected a {expected} artifact, found a {found} one")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Any loadable artifact.
#[derive(Debug, Clone, PartialEq)]
pub enum Artifact {
    Single(SoftmaxModel),
    Routed(RoutedModel),
}

impl Artifact {
    fn kind_name(&self) -> &'static str {
        match self {
            Artifact::Single(_) => "single-model",
            Artifact::Routed(_) => "per-pair",
        }
    }
}

pub fn save_model<W: Write>(model: &SoftmaxModel, out: W) -> Result<(), PersistError> {
    write_framed(out, KIND_SINGLE, |buf| encode_model(buf, model))
}

pub fn load_model<R: Read>(source: R) -> Result<SoftmaxModel, PersistError> {
    match load_artifact(source)? {
        Artifact::Single(m) => Ok(m),
        other => Err(PersistError::WrongKind {
            expected: "single-model",
            found: other.kind_name(),
        }),
    }
}

pub fn save_artifact<W: Write>(artifact: &Artifact, out: W) -> Result<(), PersistError> {
    match artifact {
        Artifact::Single(m) => save_model(m, out),
        Artifact::Routed(r) => write_framed(out, KIND_ROUTED, |buf| {
            put_u32(buf, r.keyset().len() as u32);
            for k in r.keyset().keys() {
                put_str(buf, &k.to_string());
            }
            put_u32(buf, r.pair_models().len() as u32);
            for (k, m) in r.pair_models() {
                put_str(buf, &k.to_string());
                encode_model(buf, m);
            }
            encode_model(buf, r.fallback());
        }),
    }
}

pub fn load_artifact<R: Read>(mut source: R) -> Result<Artifact, PersistError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] != MAGIC {
        return Err(PersistError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + 4 {
        return Err(PersistError::Checksum);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(PersistError::Version {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    let (payload, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    if crc32fast::hash(payload) != stored {
        return Err(PersistError::Checksum);
    }
    let kind = payload[12];
    let mut cur = Cursor {
        buf: &payload[HEADER_LEN..],
    };
    let artifact = match kind {
        KIND_SINGLE => Artifact::Single(decode_model(&mut cur)?),
        KIND_ROUTED => {
            let nkeys = cur.u32()? as usize;
            let mut keys = Vec::with_capacity(nkeys.min(1024));
            for _ in 0..nkeys {
                keys.push(parse_key(&cur.string()?)?);
            }
            let nmodels = cur.u32()? as usize;
            let mut models = Vec::with_capacity(nmodels.min(1024));
            for _ in 0..nmodels {
                let key = parse_key(&cur.string()?)?;
                models.push((key, decode_model(&mut cur)?));
            }
            let fallback = decode_model(&mut cur)?;
            Artifact::Routed(RoutedModel::from_parts(KeySet::new(keys), models, fallback))
        }
        other => return Err(PersistError::Corrupt(format!("unknown artifact kind {other}"))),
    };
    if !cur.buf.is_empty() {
        return Err(PersistError::Corrupt("trailing bytes after payload".into()));
    }
    Ok(artifact)
}

fn parse_key(s: &str) -> Result<EntityPairKey, PersistError> {
    s.parse()
        .map_err(|e| PersistError::Corrupt(format!("{e}")))
}

fn write_framed<W: Write>(
    mut out: W,
    kind: u8,
    body: impl FnOnce(&mut Vec<u8>),
) -> Result<(), PersistError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    buf.push(kind);
    body(&mut buf);
    let crc = crc32fast::hash(&buf);
    put_u32(&mut buf, crc);
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    put_u32(buf, s.len() as u32);
    buf.extend_from_slice(s.as_bytes());
}

fn encode_model(buf: &mut Vec<u8>, m: &SoftmaxModel) {
    buf.push(m.scheme().code());
    let c = m.config();
    put_u64(buf, c.batch_size as u64);
    put_u64(buf, c.epochs as u64);
    put_f64(buf, c.learning_rate);
    put_f64(buf, c.l2);
    put_u64(buf, c.seed);
    put_u64(buf, c.hash_dim as u64);
    put_u32(buf, c.ngram_orders.len() as u32);
    for &n in &c.ngram_orders {
        put_u32(buf, n as u32);
    }
    let labels = m.labels();
    put_u32(buf, labels.len() as u32);
    put_u32(
        buf,
        labels.no_relation_index().map_or(NO_SENTINEL, |i| i as u32),
    );
    for l in labels.labels() {
        put_str(buf, l.as_str());
    }
    for &b in m.bias() {
        put_f64(buf, b);
    }
    let rows = m.sorted_rows();
    put_u64(buf, rows.len() as u64);
    for (f, row) in rows {
        put_u32(buf, f);
        for &w in row {
            put_f64(buf, w);
        }
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if self.buf.len() < n {
            return Err(PersistError::Corrupt("unexpected end of payload".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, PersistError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, PersistError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| PersistError::Corrupt("invalid UTF-8 string".into()))
    }
}

fn decode_model(cur: &mut Cursor<'_>) -> Result<SoftmaxModel, PersistError> {
    let code = cur.u8()?;
    let scheme = MarkerScheme::from_code(code)
        .ok_or_else(|| PersistError::Corrupt(format!("unknown marker scheme code {code}")))?;
    let mut config = TrainConfig {
        batch_size: cur.u64()? as usize,
        epochs: cur.u64()? as usize,
        learning_rate: cur.f64()?,
        l2: cur.f64()?,
        seed: cur.u64()?,
        hash_dim: cur.u64()? as usize,
        ngram_orders: Vec::new(),
    };
    let norders = cur.u32()?;
    for _ in 0..norders {
        config.ngram_orders.push(cur.u32()? as usize);
    }
    config
        .validate()
        .map_err(|e| PersistError::Corrupt(e.to_string()))?;

    let k = cur.u32()? as usize;
    let sentinel = cur.u32()?;
    let mut labels = Vec::with_capacity(k.min(4096));
    for _ in 0..k {
        labels.push(RelationLabel::new(cur.string()?));
    }
    let sentinel_label = if sentinel == NO_SENTINEL {
        None
    } else {
        Some(
            labels
                .get(sentinel as usize)
                .cloned()
                .ok_or_else(|| PersistError::Corrupt("sentinel index out of range".into()))?,
        )
    };
    let vocab = LabelVocabulary::new(labels, sentinel_label.as_ref())
        .map_err(|e| PersistError::Corrupt(e.to_string()))?;

    let bias = (0..k).map(|_| cur.f64()).collect::<Result<Vec<_>, _>>()?;
    let nrows = cur.u64()? as usize;
    let mut rows = Vec::with_capacity(nrows.min(1 << 20));
    for _ in 0..nrows {
        let f = cur.u32()?;
        if f as usize >= config.hash_dim {
            return Err(PersistError::Corrupt(format!("feature index {f} out of range")));
        }
        let row = (0..k).map(|_| cur.f64()).collect::<Result<Vec<_>, _>>()?;
        rows.push((f, row));
    }
    Ok(SoftmaxModel::from_parts(vocab, scheme, config, bias, rows))
}
