//! Input loading and path plumbing shared by the subcommands.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use eap_core::corpus::{ExamplePair, Vocabulary};
use eap_core::metrics::{BiasMetricSpec, Lexicon, LexiconMode, MetricKind};
use eap_core::Weights;

use crate::{GlobalArgs, LexiconFlag, MetricArgs, MetricFlag, VocabArgs};

/// Marker for argument-level problems, so `main` can exit 1 instead of 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Relative output paths land in `--out-dir` (created on demand).
pub fn resolve_out(global: &GlobalArgs, path: &Path) -> Result<PathBuf> {
    let resolved =
        if path.is_absolute() { path.to_path_buf() } else { global.out_dir.join(path) };
    if let Some(parent) = resolved.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating output directory {}", parent.display()))?;
        }
    }
    Ok(resolved)
}

pub fn load_vocab(args: &VocabArgs) -> Result<Vocabulary> {
    match &args.vocab_file {
        Some(path) => Vocabulary::from_file(path)
            .with_context(|| format!("loading vocabulary {}", path.display())),
        None => Ok(Vocabulary::builtin().clone()),
    }
}

pub fn load_model(path: &Path) -> Result<Weights> {
    eap_core::weightio::load_weights(path)
        .with_context(|| format!("loading weight bundle {}", path.display()))
}

pub fn load_pairs(path: &Path) -> Result<Vec<ExamplePair>> {
    let pairs = eap_core::corpus::read_pairs(path)
        .with_context(|| format!("loading pairs {}", path.display()))?;
    if pairs.is_empty() {
        anyhow::bail!("pair file {} is empty", path.display());
    }
    Ok(pairs)
}

pub fn build_spec(args: &MetricArgs, vocab: &Vocabulary) -> Result<BiasMetricSpec> {
    if args.k == 0 {
        return Err(usage("--k must be at least 1"));
    }
    let lexicon = match (&args.pos_file, &args.neg_file) {
        (Some(pos), Some(neg)) => {
            let mode = match args.lexicon {
                LexiconFlag::Sentiment => LexiconMode::Sentiment,
                LexiconFlag::Gender => LexiconMode::Gender,
            };
            let lexicon = Lexicon::from_files(mode, pos, neg, vocab)
                .context("loading lexicon files")?;
            if !lexicon.unmapped().is_empty() {
                log::warn!(
                    "{} lexicon words missing from the vocabulary: {:?}",
                    lexicon.unmapped().len(),
                    lexicon.unmapped()
                );
            }
            lexicon
        }
        _ => match args.lexicon {
            LexiconFlag::Sentiment => Lexicon::builtin_sentiment(vocab),
            LexiconFlag::Gender => Lexicon::builtin_gender(vocab),
        },
    };
    let kind = match args.metric {
        MetricFlag::L1 => MetricKind::L1,
        MetricFlag::L2 => MetricKind::L2,
    };
    Ok(BiasMetricSpec::new(kind, args.k, lexicon))
}

pub fn parse_fractions(list: &str) -> Result<Vec<f64>> {
    let mut fractions = Vec::new();
    for part in list.split(',') {
        let value: f64 = part
            .trim()
            .parse()
            .map_err(|_| usage(format!("bad fraction {part:?} in --fractions")))?;
        fractions.push(value);
    }
    fractions.sort_by(|a, b| a.partial_cmp(b).expect("finite fractions"));
    Ok(fractions)
}
