//! `eap` — bias-circuit discovery on desk-scale transformers.
//!
//! Subcommands cover the full pipeline: model init/fine-tuning, pair
//! generation, EAP attribution, the exact-patching oracle, circuit
//! evaluation, localization and overlap analyses, and inference-time
//! debiasing. Identical inputs and `--seed` produce byte-identical
//! outputs; exit codes are 0 (success), 1 (usage error), 2 (data error).

mod commands;
mod helpers;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "eap", version, about = "Edge-attribution-patching bias analysis")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Worker-pool size; defaults to the available parallelism.
    #[arg(long, global = true, env = "EAP_THREADS")]
    threads: Option<usize>,

    /// Directory that relative output paths land in.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MetricFlag {
    L1,
    L2,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LexiconFlag {
    /// Positive/negative sentiment word classes.
    Sentiment,
    /// Male/female-stereotypical word classes.
    Gender,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CorruptionFlag {
    C1,
    C2,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TemplateFlag {
    Dss1,
    Dss2,
    Gss1,
    Gss2,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BuiltinEntities {
    Nationalities,
    Professions,
}

/// Metric selection shared by the attribution-style subcommands.
#[derive(Args)]
struct MetricArgs {
    /// Bias metric: signed positive-minus-negative mass (l1) or positive
    /// mass (l2).
    #[arg(long, value_enum, default_value_t = MetricFlag::L2)]
    metric: MetricFlag,

    /// Top-k size of the metric.
    #[arg(long, default_value_t = eap_core::metrics::DEFAULT_TOP_K)]
    k: usize,

    /// Builtin token-class lexicon.
    #[arg(long, value_enum, default_value_t = LexiconFlag::Sentiment)]
    lexicon: LexiconFlag,

    /// Positive-class word file (one word per line; overrides the builtin
    /// lexicon together with --neg-file).
    #[arg(long, requires = "neg_file")]
    pos_file: Option<PathBuf>,

    /// Negative-class word file.
    #[arg(long, requires = "pos_file")]
    neg_file: Option<PathBuf>,
}

#[derive(Args)]
struct VocabArgs {
    /// Vocabulary file, one token per line; the builtin sample vocabulary
    /// when omitted.
    #[arg(long)]
    vocab_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Node and edge counts of the computational graph.
    GraphInfo {
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        heads: usize,
    },

    /// Generate clean/corrupted example pairs from a sentence template.
    GenPairs {
        /// Builtin sentence structure.
        #[arg(long, value_enum, conflicts_with = "templates_file")]
        template: Option<TemplateFlag>,
        /// JSON template file (array of {id, pattern, c1, c2}).
        #[arg(long, requires = "template_id")]
        templates_file: Option<PathBuf>,
        /// Template id to pick from --templates-file.
        #[arg(long)]
        template_id: Option<String>,
        /// Entity file, one per line.
        #[arg(long, conflicts_with = "builtin_entities")]
        entities: Option<PathBuf>,
        /// Builtin entity list (defaults to nationalities for DSS
        /// templates, professions for GSS).
        #[arg(long, value_enum)]
        builtin_entities: Option<BuiltinEntities>,
        /// Corruption strategy: out-of-distribution (c1) or neutral
        /// in-distribution (c2).
        #[arg(long, value_enum, default_value_t = CorruptionFlag::C2)]
        corruption: CorruptionFlag,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Output JSONL file.
        #[arg(long)]
        out: PathBuf,
    },

    /// Initialize a random weight bundle.
    InitModel {
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        heads: usize,
        #[arg(long)]
        d_model: usize,
        /// Per-head dimension; d_model / heads when omitted.
        #[arg(long)]
        d_head: Option<usize>,
        /// MLP width; 4 * d_model when omitted.
        #[arg(long)]
        d_mlp: Option<usize>,
        /// Vocabulary size; the vocabulary file's length when omitted.
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long, default_value_t = 32)]
        max_seq: usize,
        /// Disable per-port and final layernorm.
        #[arg(long)]
        no_layernorm: bool,
        #[arg(long, default_value_t = 1e-5)]
        ln_epsilon: f64,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Output weight bundle (.eapw).
        #[arg(long)]
        out: PathBuf,
    },

    /// Gradient-descent fine-tuning on a sentence corpus.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        /// Corpus file, one sentence per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        lr: f64,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Output weight bundle.
        #[arg(long)]
        out: PathBuf,
    },

    /// EAP scores for every edge, dumped to CSV (and optionally a circuit
    /// JSON / DOT rendering of the top edges).
    Attribute {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Output score CSV.
        #[arg(long)]
        out: PathBuf,
        /// Keep only the top-N edges in-graph before exporting.
        #[arg(long)]
        top: Option<usize>,
        /// Also write the scored circuit as JSON.
        #[arg(long)]
        circuit_json: Option<PathBuf>,
        /// Also write a DOT rendering of the in-graph edges.
        #[arg(long)]
        dot: Option<PathBuf>,
    },

    /// Exhaustive exact-patch sweep on one pair, compared against EAP.
    Oracle {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Which pair of the file to sweep.
        #[arg(long, default_value_t = 0)]
        pair_index: usize,
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Output CSV (edge_name, eap_score, exact_delta).
        #[arg(long)]
        out: PathBuf,
    },

    /// Baseline metric, and circuit metric when a circuit file is given.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Circuit JSON produced by `attribute --circuit-json`.
        #[arg(long)]
        circuit: Option<PathBuf>,
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        vocab: VocabArgs,
    },

    /// Layer histogram of important edges plus the ablation curve.
    Localize {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Fraction of edges counted as important for the histogram.
        #[arg(long, default_value_t = 0.05)]
        fraction: f64,
        /// Share above which a layer is flagged (strictly greater).
        #[arg(long, default_value_t = 0.20)]
        threshold: f64,
        /// Comma-separated ablation fractions for the curve.
        #[arg(long, default_value = "0,0.1,0.2,0.3,0.4,0.6,0.8,1")]
        fractions: String,
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Histogram CSV path.
        #[arg(long, default_value = "layer_histogram.csv")]
        hist_out: PathBuf,
        /// Curve CSV path.
        #[arg(long, default_value = "ablation_curve.csv")]
        curve_out: PathBuf,
    },

    /// Top-k overlap matrix across score CSVs.
    Overlap {
        /// Top-k size of the overlap (required: the right k is
        /// configuration-dependent).
        #[arg(long)]
        k: usize,
        /// Two or more score CSVs.
        #[arg(long, num_args = 2.., required = true)]
        inputs: Vec<PathBuf>,
        /// Comma-separated labels (file stems when omitted).
        #[arg(long)]
        labels: Option<String>,
        /// Output CSV.
        #[arg(long, default_value = "overlap.csv")]
        out: PathBuf,
    },

    /// Patch corrupted activations onto the top-N bias edges and report
    /// the change in bias.
    Debias {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        /// Score CSV naming the bias edges.
        #[arg(long)]
        scores: PathBuf,
        /// Edges to patch; ceil(1% of the graph) when omitted.
        #[arg(long)]
        n: Option<usize>,
        /// Regenerate each pair's corrupted side from the clean tokens via
        /// the builtin template registry (word-swap fallback).
        #[arg(long)]
        auto_corrupt: bool,
        #[command(flatten)]
        metric: MetricArgs,
        #[command(flatten)]
        vocab: VocabArgs,
        /// Output JSON report.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    if let Some(threads) = cli.global.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: could not size the worker pool: {e}");
            std::process::exit(1);
        }
    }

    match commands::dispatch(&cli.global, cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = if e.downcast_ref::<helpers::UsageError>().is_some() { 1 } else { 2 };
            std::process::exit(code);
        }
    }
}
