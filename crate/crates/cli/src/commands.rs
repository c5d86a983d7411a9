use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use anyhow::{Context, Result};
use chrono::Utc;
use serde_json::{json, Value};

use relmark_core::classifier::{
    load_artifact, load_external_predictions, save_artifact, train_with_vocabulary,
    write_predictions, Artifact, ExternalScoreFile,
};
use relmark_core::corpus::{compute_stats, instance_to_record, parse_dataset, ParseOptions, ParsedDataset};
use relmark_core::eval::{
    compare_models, evaluate, per_pair_report, read_baselines, EvalError, StrictMode,
};
use relmark_core::router::{partition_dataset, predict_routed, train_routed};
use relmark_core::*;

use crate::support::{
    data_error, open_input, parse_options, read_config, read_input, read_labels, usage, write_output, FileConfig,
    ManifestSink,
};
use crate::{Cli, Command, Global, StrictModeArg, TrainArgs};

/// Record key carrying the scheme of already-marked instances.
pub const SCHEME_KEY: &str = "marker_scheme";

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let sink = ManifestSink {
        explicit: g.manifest.clone(),
        started: Utc::now(),
    };
    match &cli.command {
        Command::Ingest { input, output } => ingest(g, &sink, input, output),
        Command::Stats { input } => stats(g, &sink, input),
        Command::Preprocess { input, output, scheme } => preprocess(g, &sink, input, output, scheme),
        Command::Route { input, keys } => route(g, &sink, input, keys.as_deref()),
        Command::Train(args) => train_cmd(g, &sink, args),
        Command::Predict {
            input,
            model,
            output,
            per_pair,
            no_probabilities,
        } => predict_cmd(g, &sink, input, model, output, *per_pair, *no_probabilities),
        Command::Evaluate {
            gold,
            pred,
            strict,
            strict_mode,
            per_pair,
            keys,
            baseline,
            decimals,
        } => evaluate_cmd(
            g,
            &sink,
            EvaluateArgs {
                gold,
                pred,
                strict: *strict,
                mode: match strict_mode {
                    StrictModeArg::FilteredAccuracy => StrictMode::FilteredAccuracy,
                    StrictModeArg::NoExcludedMicro => StrictMode::NoExcludedMicro,
                },
                per_pair: *per_pair,
                keys: keys.as_deref(),
                baseline: baseline.as_deref(),
                decimals: *decimals,
            },
        ),
        Command::Compare {
            gold,
            preds,
            classes,
            indexed,
            latex,
            decimals,
        } => compare(g, &sink, gold, preds, *classes, *indexed, *latex, *decimals),
    }
}

fn seed_of(g: &Global) -> Result<u64> {
    Ok(g.seed.unwrap_or(read_config(g.config.as_deref())?.train.seed))
}

fn load(g: &Global, path: &Path) -> Result<(ParsedDataset, ParseOptions)> {
    let opts = parse_options(g.field_map.as_deref(), g.lenient)?;
    let parsed = parse_dataset(open_input(path)?, &opts).with_context(|| format!("in {}", path.display()))?;
    for s in &parsed.skipped {
        eprintln!("relmark: skipped {}:{}: {}", path.display(), s.line, s.reason);
    }
    Ok((parsed, opts))
}

fn paths(pairs: &[(&str, &Path)]) -> Value {
    pairs
        .iter()
        .map(|(k, p)| (k.to_string(), Value::from(p.display().to_string())))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

fn parse_scheme(s: &str) -> Result<MarkerScheme> {
    s.parse().map_err(|e| usage(format!("{e}")))
}

fn parse_keys(s: &str) -> Result<KeySet> {
    KeySet::parse_list(s).map_err(|e| usage(format!("{e}")))
}

/// The scheme recorded on pre-marked records, if every record carries one.
fn recorded_scheme(parsed: &ParsedDataset, path: &Path) -> Result<Option<MarkerScheme>> {
    let mut found: BTreeSet<String> = BTreeSet::new();
    let mut unmarked = 0;
    for extra in &parsed.extras {
        match extra.get(SCHEME_KEY).and_then(Value::as_str) {
            Some(s) => {
                found.insert(s.to_string());
            }
            None => unmarked += 1,
        }
    }
    if found.is_empty() {
        return Ok(None);
    }
    if unmarked > 0 || found.len() > 1 {
        return Err(data_error(format!(
            "{}: records mix marker schemes ({} unmarked, schemes {:?})",
            path.display(),
            unmarked,
            found
        )));
    }
    let name = found.into_iter().next().expect("one scheme");
    Ok(Some(name.parse().with_context(|| format!("in {}", path.display()))?))
}

/// Marks `parsed` with `scheme`, or takes records as already marked when they
/// say so (in which case the recorded scheme must agree with an explicit one).
fn marked_instances(
    parsed: &ParsedDataset,
    path: &Path,
    scheme: MarkerScheme,
    explicit: bool,
) -> Result<(Vec<MarkedInstance>, MarkerScheme)> {
    match recorded_scheme(parsed, path)? {
        Some(recorded) => {
            if explicit && recorded != scheme {
                return Err(data_error(format!(
                    "{} is already marked with {}, not {}",
                    path.display(),
                    recorded.name(),
                    scheme.name()
                )));
            }
            let marked = parsed.instances.iter().map(|i| MarkedInstance::premarked(i, recorded)).collect();
            Ok((marked, recorded))
        }
        None => {
            let marked = parsed
                .instances
                .iter()
                .map(|i| insert_markers(i, scheme))
                .collect::<Result<Vec<_>, _>>()
                .with_context(|| format!("in {}", path.display()))?;
            Ok((marked, scheme))
        }
    }
}

fn ingest(g: &Global, sink: &ManifestSink, input: &Path, output: &Path) -> Result<()> {
    let (parsed, _) = load(g, input)?;
    let mapping = Default::default();
    write_output(output, |w| {
        for (inst, extra) in parsed.instances.iter().zip(&parsed.extras) {
            serde_json::to_writer(&mut *w, &instance_to_record(inst, &mapping, Some(extra)))?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    eprintln!(
        "relmark: ingested {} instances, skipped {}",
        parsed.instances.len(),
        parsed.skipped.len()
    );
    sink.emit(
        "ingest",
        seed_of(g)?,
        json!({ "paths": paths(&[("input", input), ("output", output)]), "lenient": g.lenient }),
        Some(output),
    )
}

fn stats(g: &Global, sink: &ManifestSink, input: &Path) -> Result<()> {
    let (parsed, _) = load(g, input)?;
    let s = compute_stats(&parsed.instances).with_context(|| format!("in {}", input.display()))?;
    if g.json {
        println!("{}", serde_json::to_string_pretty(&s)?);
    } else {
        println!("instances             {}", s.instances);
        println!("no_relation fraction  {:.4}", s.no_relation_fraction);
        println!("mean sentence length  {:.2}", s.mean_sentence_length);
        println!("mean entity distance  {:.2}", s.mean_entity_distance);
        println!();
        let width = s.relations.keys().map(|k| k.as_str().len()).max().unwrap_or(0).max(8);
        println!("{:<width$}  {:>7}", "relation", "count");
        for (k, v) in &s.relations {
            println!("{:<width$}  {v:>7}", k.as_str());
        }
        println!();
        let width = s.pairs.keys().map(|k| k.to_string().len()).max().unwrap_or(0).max(11);
        println!("{:<width$}  {:>7}", "entity pair", "count");
        let mut pairs: Vec<_> = s.pairs.iter().collect();
        pairs.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        for (k, v) in pairs {
            println!("{:<width$}  {v:>7}", k.to_string());
        }
    }
    sink.emit("stats", seed_of(g)?, json!({ "paths": paths(&[("input", input)]) }), None)
}

fn preprocess(g: &Global, sink: &ManifestSink, input: &Path, output: &Path, scheme: &str) -> Result<()> {
    let scheme = parse_scheme(scheme)?;
    let (parsed, opts) = load(g, input)?;
    if let Some(recorded) = recorded_scheme(&parsed, input)? {
        return Err(data_error(format!(
            "{} is already marked with {}",
            input.display(),
            recorded.name()
        )));
    }
    let (marked, _) = marked_instances(&parsed, input, scheme, true)?;
    write_output(output, |w| {
        for ((m, orig), extra) in marked.iter().zip(&parsed.instances).zip(&parsed.extras) {
            let inst = TokenizedInstance {
                id: m.id.clone(),
                tokens: m.tokens.clone(),
                subj: m.subj.clone(),
                obj: m.obj.clone(),
                relation: orig.relation.clone(),
            };
            let mut extra = extra.clone();
            extra.insert(SCHEME_KEY.into(), Value::from(scheme.name()));
            serde_json::to_writer(&mut *w, &instance_to_record(&inst, &opts.mapping, Some(&extra)))?;
            writeln!(w)?;
        }
        Ok(())
    })?;
    sink.emit(
        "preprocess",
        seed_of(g)?,
        json!({ "scheme": scheme.name(), "paths": paths(&[("input", input), ("output", output)]) }),
        Some(output),
    )
}

fn resolve_keys(flag: Option<&str>, cfg: &FileConfig) -> Result<KeySet> {
    Ok(match flag {
        Some(s) => parse_keys(s)?,
        None => cfg.keys.clone().unwrap_or_default(),
    })
}

fn route(g: &Global, sink: &ManifestSink, input: &Path, keys: Option<&str>) -> Result<()> {
    let cfg = read_config(g.config.as_deref())?;
    let keyset = resolve_keys(keys, &cfg)?;
    let (parsed, _) = load(g, input)?;
    let partition = partition_dataset(&parsed.instances, &keyset);
    let census = partition.census();
    if g.json {
        let rows: Vec<Value> = census
            .iter()
            .map(|(k, n, residual)| json!({ "key": k.to_string(), "count": n, "residual": residual }))
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows)?);
    } else {
        let width = census.iter().map(|(k, _, _)| k.to_string().len()).max().unwrap_or(0).max(11);
        println!("{:<width$}  {:>7}  route", "entity pair", "count");
        for (k, n, residual) in &census {
            let route = if *residual { "fallback" } else { "pair model" };
            println!("{:<width$}  {n:>7}  {route}", k.to_string());
        }
        println!(
            "{} routed, {} residual",
            partition.len() - partition.residual.len(),
            partition.residual.len()
        );
    }
    sink.emit(
        "route",
        seed_of(g)?,
        json!({ "keys": keyset, "paths": paths(&[("input", input)]) }),
        None,
    )
}

fn train_cmd(g: &Global, sink: &ManifestSink, args: &TrainArgs) -> Result<()> {
    let file = read_config(g.config.as_deref())?;
    let mut cfg = file.train.clone();
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.l2 {
        cfg.l2 = v;
    }
    if let Some(bits) = args.hash_bits {
        if !(1..=31).contains(&bits) {
            return Err(usage("--hash-bits must be between 1 and 31"));
        }
        cfg.hash_dim = 1 << bits;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let explicit = args.scheme.is_some() || file.scheme.is_some();
    let scheme = match &args.scheme {
        Some(s) => parse_scheme(s)?,
        None => file.scheme.unwrap_or_default(),
    };
    let keyset = resolve_keys(args.keys.as_deref(), &file)?;
    let jobs = args.jobs.or(file.jobs).unwrap_or(1);
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }

    let (parsed, _) = load(g, &args.input)?;
    let (marked, scheme) = marked_instances(&parsed, &args.input, scheme, explicit)?;
    let data: Vec<(MarkedInstance, RelationLabel)> = marked
        .into_iter()
        .zip(&parsed.instances)
        .map(|(m, inst)| {
            inst.relation
                .clone()
                .map(|l| (m, l))
                .ok_or_else(|| data_error(format!("{}: instance {} has no relation label", args.input.display(), inst.id)))
        })
        .collect::<Result<_>>()?;
    let vocab = match &g.labels {
        Some(p) => read_labels(p)?,
        None => LabelVocabulary::from_observed(data.iter().map(|(_, l)| l))?,
    };

    let artifact = if args.per_pair {
        Artifact::Routed(train_routed(&data, &keyset, &vocab, &cfg, jobs)?)
    } else {
        let (model, losses) = train_with_vocabulary(&data, vocab, &cfg)?;
        if let Some(last) = losses.last() {
            eprintln!("relmark: final training objective {last:.6}");
        }
        Artifact::Single(model)
    };
    write_output(&args.model, |w| Ok(save_artifact(&artifact, w)?))?;
    sink.emit(
        "train",
        cfg.seed,
        json!({
            "train": cfg,
            "scheme": scheme.name(),
            "per_pair": args.per_pair,
            "keys": keyset,
            "jobs": jobs,
            "instances": data.len(),
            "paths": paths(&[("input", &args.input), ("model", &args.model)]),
        }),
        Some(&args.model),
    )
}

fn predict_cmd(
    g: &Global,
    sink: &ManifestSink,
    input: &Path,
    model_path: &Path,
    output: &Path,
    per_pair: bool,
    no_probabilities: bool,
) -> Result<()> {
    let bytes = read_input(model_path)?;
    let artifact = load_artifact(bytes.as_slice()).with_context(|| format!("in {}", model_path.display()))?;
    let (scheme, vocab, kind, seed) = match &artifact {
        Artifact::Single(m) => (m.scheme(), m.labels().clone(), "single", m.config().seed),
        Artifact::Routed(r) => (r.scheme(), r.labels().clone(), "per-pair", r.fallback().config().seed),
    };
    if per_pair && kind != "per-pair" {
        return Err(data_error(format!("{} is a single model, not a per-pair model", model_path.display())));
    }
    let (parsed, _) = load(g, input)?;
    let (marked, _) = marked_instances(&parsed, input, scheme, true)?;
    let records = marked
        .iter()
        .map(|m| -> Result<PredictionRecord> {
            Ok(match &artifact {
                Artifact::Single(model) => predict(model, m)?,
                Artifact::Routed(model) => predict_routed(model, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let vocab_out = (!no_probabilities).then_some(&vocab);
    write_output(output, |w| Ok(write_predictions(&records, vocab_out, w)?))?;
    sink.emit(
        "predict",
        seed,
        json!({
            "model_kind": kind,
            "scheme": scheme.name(),
            "labels": vocab.labels().iter().map(|l| l.as_str()).collect::<Vec<_>>(),
            "instances": records.len(),
            "paths": paths(&[("input", input), ("model", model_path), ("output", output)]),
        }),
        Some(output),
    )
}

/// Labels named in the second column of a prediction TSV (header excluded).
fn predicted_labels(path: &Path) -> Result<Vec<RelationLabel>> {
    let text = read_input(path)?;
    Ok(String::from_utf8_lossy(&text)
        .lines()
        .skip_while(|l| l.trim().is_empty())
        .skip(1)
        .filter_map(|l| l.split('\t').nth(1))
        .map(|l| RelationLabel::new(l.trim()))
        .collect())
}

/// Reads a prediction TSV. With `labels_only` probability columns are dropped,
/// for vocabularies inferred from the data whose order the file may not follow.
fn load_predictions(path: &Path, name: &str, vocab: &LabelVocabulary, labels_only: bool) -> Result<ExternalScoreFile> {
    let mut text = read_input(path)?;
    if labels_only {
        text = String::from_utf8_lossy(&text)
            .lines()
            .map(|l| l.splitn(3, '\t').take(2).collect::<Vec<_>>().join("\t") + "\n")
            .collect::<String>()
            .into_bytes();
    }
    Ok(load_external_predictions(text.as_slice(), name, vocab).with_context(|| format!("in {}", path.display()))?)
}

fn vocabulary(
    g: &Global,
    gold: &[TokenizedInstance],
    predicted: &[RelationLabel],
) -> Result<LabelVocabulary> {
    match &g.labels {
        Some(p) => read_labels(p),
        None => Ok(LabelVocabulary::from_observed(
            gold.iter().filter_map(|i| i.relation.as_ref()).chain(predicted),
        )?),
    }
}

fn gold_labels(gold: &[TokenizedInstance], path: &Path) -> Result<Vec<RelationLabel>> {
    gold.iter()
        .map(|i| {
            i.relation
                .clone()
                .ok_or_else(|| EvalError::Unlabeled(i.id.clone()).into())
        })
        .collect::<Result<_>>()
        .with_context(|| format!("in {}", path.display()))
}

fn aligned(
    gold: &[TokenizedInstance],
    records: &[PredictionRecord],
    pred_path: &Path,
) -> Result<Vec<RelationLabel>> {
    let by_id: HashMap<&str, &PredictionRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|i| i.id.as_str()).collect();
    if let Some(extra) = records.iter().find(|r| !gold_ids.contains(r.id.as_str())) {
        return Err(data_error(format!(
            "{}: prediction for id {} has no gold instance",
            pred_path.display(),
            extra.id
        )));
    }
    gold.iter()
        .map(|i| {
            by_id
                .get(i.id.as_str())
                .map(|r| r.label.clone())
                .ok_or_else(|| EvalError::MissingPrediction(i.id.clone()).into())
        })
        .collect::<Result<_>>()
        .with_context(|| format!("in {}", pred_path.display()))
}

struct EvaluateArgs<'a> {
    gold: &'a Path,
    pred: &'a Path,
    strict: bool,
    mode: StrictMode,
    per_pair: bool,
    keys: Option<&'a str>,
    baseline: Option<&'a Path>,
    decimals: usize,
}

fn evaluate_cmd(g: &Global, sink: &ManifestSink, a: EvaluateArgs<'_>) -> Result<()> {
    let (parsed, _) = load(g, a.gold)?;
    let gold = &parsed.instances;
    let inferred = g.labels.is_none();
    let predicted = if inferred { predicted_labels(a.pred)? } else { Vec::new() };
    let vocab = vocabulary(g, gold, &predicted)?;
    let file = load_predictions(a.pred, "predictions", &vocab, inferred)?;
    let no_rel = vocab.no_relation().cloned().unwrap_or_else(RelationLabel::no_relation);
    let gold_l = gold_labels(gold, a.gold)?;
    let pred_l = aligned(gold, &file.records, a.pred)?;
    let report = evaluate(&gold_l, &pred_l, &vocab, &no_rel, a.mode)?;

    let file_cfg = read_config(g.config.as_deref())?;
    let pair_table = if a.per_pair {
        let keyset = resolve_keys(a.keys, &file_cfg)?;
        let baselines = match a.baseline {
            Some(p) => read_baselines(open_input(p)?).with_context(|| format!("in {}", p.display()))?,
            None => Vec::new(),
        };
        let partition = partition_dataset(gold, &keyset);
        Some(per_pair_report(&partition, &file.records, &vocab, &no_rel, &baselines)?)
    } else {
        None
    };

    if g.json {
        let mut v = serde_json::to_value(&report)?;
        if let Some(t) = &pair_table {
            v["per_pair"] = t.to_json();
        }
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else if a.strict {
        println!("strict F1 {}", report.strict_f1.render(a.decimals));
        println!("filtered out {} of {}", report.filtered_out, report.instances);
    } else {
        print!("{}", report.render_text(a.decimals));
        if let Some(t) = &pair_table {
            println!();
            print!("{}", t.render_text(a.decimals));
        }
    }
    sink.emit(
        "evaluate",
        seed_of(g)?,
        json!({
            "strict_mode": a.mode,
            "per_pair": a.per_pair,
            "paths": paths(&[("gold", a.gold), ("pred", a.pred)]),
        }),
        None,
    )
}

#[allow(clippy::too_many_arguments)]
fn compare(
    g: &Global,
    sink: &ManifestSink,
    gold_path: &Path,
    preds: &[String],
    classes: bool,
    indexed: bool,
    latex: bool,
    decimals: usize,
) -> Result<()> {
    let (parsed, _) = load(g, gold_path)?;
    let gold = &parsed.instances;
    let specs: Vec<(&str, &Path)> = preds
        .iter()
        .map(|s| {
            s.split_once('=')
                .filter(|(n, p)| !n.is_empty() && !p.is_empty())
                .map(|(n, p)| (n, Path::new(p)))
                .ok_or_else(|| usage(format!("--pred expects NAME=FILE, got {s:?}")))
        })
        .collect::<Result<_>>()?;
    let inferred = g.labels.is_none();
    let mut predicted = Vec::new();
    if inferred {
        for (_, path) in &specs {
            predicted.extend(predicted_labels(path)?);
        }
    }
    let vocab = vocabulary(g, gold, &predicted)?;
    let mut sources = Vec::new();
    for (name, path) in &specs {
        let file = load_predictions(path, name, &vocab, inferred)?;
        aligned(gold, &file.records, path)?;
        sources.push(file);
    }
    let no_rel = vocab.no_relation().cloned().unwrap_or_else(RelationLabel::no_relation);
    gold_labels(gold, gold_path)?;
    let mut table = compare_models(&sources, gold, &vocab, &no_rel)?;
    if indexed {
        table.per_class = table.per_class.map(|grid| grid.indexed());
    }
    if g.json {
        println!("{}", serde_json::to_string_pretty(&table.to_json())?);
    } else if latex {
        print!("{}", table.render_latex_rows(decimals));
    } else {
        print!("{}", table.render_text(decimals));
        if classes {
            if let Some(grid) = &table.per_class {
                println!();
                print!("{}", grid.render_text(decimals));
            }
        }
    }
    let mut p: Vec<(&str, &Path)> = vec![("gold", gold_path)];
    p.extend(specs.iter().copied());
    sink.emit("compare", seed_of(g)?, json!({ "paths": paths(&p) }), None)
}
