//! File plumbing shared by the subcommands: path resolution, atomic output,
//! config files and run manifests.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;
use serde_json::{Map, Value};

use relmark_core::corpus::{FieldMapping, ParseMode, ParseOptions, TypeVocabulary};
use relmark_core::{KeySet, LabelVocabulary, MarkerScheme, TrainConfig};

/// Default directory for relative input paths.
pub const DATA_DIR_ENV: &str = "RELMARK_DATA_DIR";

/// A usage mistake detected after argument parsing (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Inconsistent input data not caught by a library error type (exit code 2).
#[derive(Debug)]
pub struct DataError(pub String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

pub fn data_error(msg: impl Into<String>) -> anyhow::Error {
    DataError(msg.into()).into()
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

/// Relative input paths are taken from `$RELMARK_DATA_DIR` when it is set.
pub fn resolve_input(path: &Path) -> PathBuf {
    if is_stdio(path) || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if !dir.is_empty() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

pub fn open_input(path: &Path) -> Result<Box<dyn BufRead>> {
    if is_stdio(path) {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let resolved = resolve_input(path);
    let file = File::open(&resolved).with_context(|| format!("cannot open {}", resolved.display()))?;
    Ok(Box::new(BufReader::new(file)))
}

pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    open_input(path)?
        .read_to_end(&mut buf)
        .with_context(|| format!("cannot read {}", path.display()))?;
    Ok(buf)
}

/// Writes `path` through a temporary file in the same directory, renamed into
/// place on success. `-` writes to stdout.
pub fn write_output(path: &Path, write: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if is_stdio(path) {
        let stdout = io::stdout();
        let mut lock = stdout.lock();
        write(&mut lock)?;
        lock.flush()?;
        return Ok(());
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    {
        let mut buffered = io::BufWriter::new(tmp.as_file_mut());
        write(&mut buffered).with_context(|| format!("cannot write {}", path.display()))?;
        buffered.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("cannot move output into place at {}", path.display()))?;
    Ok(())
}

/// Field mapping file: the mapping keys plus optional `types` and `aliases`.
pub fn parse_options(field_map: Option<&Path>, lenient: bool) -> Result<ParseOptions> {
    let mut opts = ParseOptions {
        mode: if lenient { ParseMode::Lenient } else { ParseMode::Strict },
        ..Default::default()
    };
    let Some(path) = field_map else {
        return Ok(opts);
    };
    let text = read_input(path)?;
    let mut obj: Map<String, Value> = serde_json::from_slice(&text)
        .with_context(|| format!("invalid field map {}", path.display()))?;
    let types = obj.remove("types");
    let aliases = obj.remove("aliases");
    opts.mapping = serde_json::from_value::<FieldMapping>(Value::Object(obj))
        .with_context(|| format!("invalid field map {}", path.display()))?;
    if types.is_some() || aliases.is_some() {
        let mut vocab = TypeVocabulary::default();
        if let Some(t) = types {
            vocab.types = serde_json::from_value(t).with_context(|| format!("invalid types in {}", path.display()))?;
        }
        if let Some(a) = aliases {
            vocab.aliases = serde_json::from_value(a).with_context(|| format!("invalid aliases in {}", path.display()))?;
        }
        opts.types = Some(vocab);
    }
    Ok(opts)
}

pub fn read_labels(path: &Path) -> Result<LabelVocabulary> {
    LabelVocabulary::read(open_input(path)?).with_context(|| format!("invalid label file {}", path.display()))
}

/// Settings a config file may provide; flags override them.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    pub train: TrainConfig,
    pub scheme: Option<MarkerScheme>,
    pub keys: Option<KeySet>,
    pub jobs: Option<usize>,
}

pub fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = read_input(path)?;
    let mut obj: Map<String, Value> =
        serde_json::from_slice(&text).with_context(|| format!("invalid config {}", path.display()))?;
    let mut cfg = FileConfig::default();
    if let Some(v) = obj.remove("scheme") {
        let Some(s) = v.as_str() else {
            return Err(data_error(format!("invalid config {}: scheme must be a string", path.display())));
        };
        cfg.scheme = Some(s.parse().with_context(|| format!("invalid config {}", path.display()))?);
    }
    if let Some(v) = obj.remove("keys") {
        let list = match v {
            Value::String(s) => s,
            Value::Array(items) => items
                .iter()
                .map(|i| i.as_str().map(str::to_string))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| data_error(format!("invalid config {}: keys must be strings", path.display())))?
                .join(","),
            _ => return Err(data_error(format!("invalid config {}: keys must be a list", path.display()))),
        };
        cfg.keys = Some(KeySet::parse_list(&list).with_context(|| format!("invalid config {}", path.display()))?);
    }
    if let Some(v) = obj.remove("jobs") {
        cfg.jobs = Some(
            v.as_u64()
                .ok_or_else(|| data_error(format!("invalid config {}: jobs must be a positive integer", path.display())))?
                as usize,
        );
    }
    cfg.train = serde_json::from_value(Value::Object(obj)).with_context(|| format!("invalid config {}", path.display()))?;
    Ok(cfg)
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub seed: u64,
    pub config: Value,
    pub started: String,
    pub finished: String,
}

pub struct ManifestSink {
    pub explicit: Option<PathBuf>,
    pub started: DateTime<Utc>,
}

impl ManifestSink {
    /// Writes the manifest to `--manifest`, next to `output` as
    /// `<output>.manifest.json`, or to stderr when neither is a file.
    pub fn emit(&self, subcommand: &str, seed: u64, config: Value, output: Option<&Path>) -> Result<()> {
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            started: self.started.to_rfc3339_opts(SecondsFormat::Millis, true),
            finished: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        };
        let target = self.explicit.clone().or_else(|| {
            output.filter(|p| !is_stdio(p)).map(|p| {
                let mut s = p.as_os_str().to_owned();
                s.push(".manifest.json");
                PathBuf::from(s)
            })
        });
        match target {
            Some(path) => write_output(&path, |w| {
                serde_json::to_writer_pretty(&mut *w, &manifest)?;
                writeln!(w)?;
                Ok(())
            }),
            None => {
                eprintln!("{}", serde_json::to_string(&manifest)?);
                Ok(())
            }
        }
    }
}
