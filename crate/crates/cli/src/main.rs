use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use relmark_core::classifier::ClassifierError;
use relmark_core::corpus::CorpusError;
use relmark_core::eval::EvalError;
use relmark_core::labels::LabelError;
use relmark_core::markers::MarkerError;
use relmark_core::router::RouterError;

mod commands;
mod support;

use support::{DataError, UsageError};

#[derive(Debug, Parser)]
#[command(name = "relmark", version, about = "Relation extraction with typed entity markers and per-pair routing")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// JSON field map: source key names, `inclusive_end`, optional `types` and `aliases`.
    #[arg(long, global = true, value_name = "FILE")]
    pub field_map: Option<PathBuf>,
    /// Label vocabulary, one label per line; prefix the NO_RELATION label with `!`.
    #[arg(long, global = true, value_name = "FILE")]
    pub labels: Option<PathBuf>,
    /// JSON training config. Flags take precedence over it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// RNG seed [default: 42].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Skip malformed records instead of failing.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Print results as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Where to write the run manifest [default: <output>.manifest.json, else stderr].
    #[arg(long, global = true, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus and rewrite it in the canonical record layout.
    Ingest {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short, default_value = "-")]
        output: PathBuf,
    },
    /// Relation and entity-pair histograms.
    Stats {
        #[arg(long, short)]
        input: PathBuf,
    },
    /// Insert entity markers.
    Preprocess {
        #[arg(long, short, default_value = "-")]
        input: PathBuf,
        #[arg(long, short, default_value = "-")]
        output: PathBuf,
        #[arg(long, default_value = "typed-punct")]
        scheme: String,
    },
    /// Show how instances split across entity-pair buckets.
    Route {
        #[arg(long, short)]
        input: PathBuf,
        /// Comma-separated SUBJ-OBJ keys.
        #[arg(long)]
        keys: Option<String>,
    },
    /// Train a classifier, or one per entity pair with --per-pair.
    Train(TrainArgs),
    /// Write a prediction TSV.
    Predict {
        #[arg(long, short)]
        input: PathBuf,
        #[arg(long, short)]
        model: PathBuf,
        #[arg(long, short, default_value = "-")]
        output: PathBuf,
        /// Require a per-pair model.
        #[arg(long)]
        per_pair: bool,
        /// Omit probability columns.
        #[arg(long)]
        no_probabilities: bool,
    },
    /// Score a prediction TSV against gold labels.
    Evaluate {
        #[arg(long, short)]
        gold: PathBuf,
        #[arg(long, short)]
        pred: PathBuf,
        /// Print only the strict F1.
        #[arg(long)]
        strict: bool,
        #[arg(long, value_enum, default_value_t = StrictModeArg::FilteredAccuracy)]
        strict_mode: StrictModeArg,
        /// Break scores down by entity pair.
        #[arg(long)]
        per_pair: bool,
        #[arg(long)]
        keys: Option<String>,
        /// `KEY<TAB>F1` lines shown as a baseline column with --per-pair.
        #[arg(long, value_name = "FILE")]
        baseline: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        decimals: usize,
    },
    /// Compare several prediction files against one gold file.
    Compare {
        #[arg(long, short)]
        gold: PathBuf,
        /// NAME=FILE, repeatable.
        #[arg(long = "pred", short, value_name = "NAME=FILE", required = true)]
        preds: Vec<String>,
        /// Also print the class × model F1 grid.
        #[arg(long)]
        classes: bool,
        /// Name classes `Class 0`, `Class 1`, … in the grid.
        #[arg(long)]
        indexed: bool,
        /// Print LaTeX table rows.
        #[arg(long)]
        latex: bool,
        #[arg(long, default_value_t = 2)]
        decimals: usize,
    },
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output model file.
    #[arg(long, short)]
    pub model: PathBuf,
    /// Marker scheme for unmarked input [default: typed-punct].
    #[arg(long)]
    pub scheme: Option<String>,
    #[arg(long)]
    pub per_pair: bool,
    #[arg(long)]
    pub keys: Option<String>,
    /// Concurrent per-pair trainings [default: 1].
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// log2 of the hashed feature space.
    #[arg(long)]
    pub hash_bits: Option<u32>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrictModeArg {
    FilteredAccuracy,
    NoExcludedMicro,
}

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_INTERNAL: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if cause.is::<DataError>()
            || cause.is::<std::io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<CorpusError>()
            || cause.is::<MarkerError>()
            || cause.is::<LabelError>()
            || cause.is::<ClassifierError>()
            || cause.is::<RouterError>()
            || cause.is::<EvalError>()
            || cause.is::<relmark_core::classifier::ExternalError>()
            || cause.is::<relmark_core::classifier::PersistError>()
        {
            return EXIT_DATA;
        }
    }
    EXIT_INTERNAL
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = format!("{e:#}").replace('\n', " ");
            eprintln!("relmark: error: {line}");
            ExitCode::from(exit_code(&e))
        }
    }
}
