//! Bias metrics over top-k next-token predictions.
//!
//! `L1` is the signed difference between positive-class and negative-class
//! probability mass inside the top-k set; `L2` is the positive-class mass
//! alone. "Positive/negative" reads as male-stereotypical/female-
//! stereotypical under a gender lexicon. Both metrics look at the last
//! sequence position.

mod classify;

pub use classify::{Classifier, Polarity, SentimentLabel, CLASSIFIER_URL_ENV};

use std::collections::HashSet;
use std::path::Path;

use ndarray::Array2;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::Weights;

// ---------------------------------------------------------------------------
// Lexicons
// ---------------------------------------------------------------------------

/// Which token classification the lexicon encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexiconMode {
    /// Positive / negative sentiment classes.
    Sentiment,
    /// Male-stereotypical / female-stereotypical classes; everything else
    /// is gender-neutral.
    Gender,
}

/// Token class sets in both string and id space. The positive role holds
/// the positive-sentiment or male-stereotypical class; the negative role
/// the negative or female-stereotypical one. Unlisted tokens are neutral.
#[derive(Debug, Clone)]
pub struct Lexicon {
    pub mode: LexiconMode,
    pos_words: Vec<String>,
    neg_words: Vec<String>,
    pos_ids: HashSet<u32>,
    neg_ids: HashSet<u32>,
    unmapped: Vec<String>,
}

impl Lexicon {
    /// Map word lists through a vocabulary. Multi-word entries key on
    /// their first token; entries whose first token is unknown are
    /// reported in `unmapped`. The two classes must be disjoint.
    pub fn from_word_lists(
        mode: LexiconMode,
        positive: &[String],
        negative: &[String],
        vocab: &Vocabulary,
    ) -> Result<Lexicon> {
        let pos_set: HashSet<&String> = positive.iter().collect();
        if let Some(shared) = negative.iter().find(|w| pos_set.contains(w)) {
            return Err(Error::InvalidArgument(format!(
                "lexicon classes overlap on {shared:?}"
            )));
        }
        let mut unmapped = Vec::new();
        let mut map = |words: &[String]| -> HashSet<u32> {
            let mut ids = HashSet::new();
            for word in words {
                match vocab.tokenize(word).first().copied() {
                    Some(id) if id != vocab.unknown_id() => {
                        ids.insert(id);
                    }
                    _ => unmapped.push(word.clone()),
                }
            }
            ids
        };
        let pos_ids = map(positive);
        let neg_ids = map(negative);
        Ok(Lexicon {
            mode,
            pos_words: positive.to_vec(),
            neg_words: negative.to_vec(),
            pos_ids,
            neg_ids,
            unmapped,
        })
    }

    /// One token per line per file (`positive.txt`/`negative.txt` or
    /// `male.txt`/`female.txt`).
    pub fn from_files(
        mode: LexiconMode,
        positive: &Path,
        negative: &Path,
        vocab: &Vocabulary,
    ) -> Result<Lexicon> {
        let read = |path: &Path| -> Result<Vec<String>> {
            Ok(std::fs::read_to_string(path)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect())
        };
        Self::from_word_lists(mode, &read(positive)?, &read(negative)?, vocab)
    }

    /// Raw id sets (fuzzing and tests). Ids must be below `vocab_size` and
    /// the classes disjoint.
    pub fn from_id_sets(
        mode: LexiconMode,
        pos_ids: HashSet<u32>,
        neg_ids: HashSet<u32>,
        vocab_size: usize,
    ) -> Result<Lexicon> {
        if let Some(shared) = pos_ids.intersection(&neg_ids).next() {
            return Err(Error::InvalidArgument(format!(
                "lexicon classes overlap on token id {shared}"
            )));
        }
        if let Some(&bad) = pos_ids.iter().chain(&neg_ids).find(|&&id| id as usize >= vocab_size)
        {
            return Err(Error::TokenOutOfRange { id: bad, vocab_size });
        }
        Ok(Lexicon {
            mode,
            pos_words: Vec::new(),
            neg_words: Vec::new(),
            pos_ids,
            neg_ids,
            unmapped: Vec::new(),
        })
    }

    /// Shipped sentiment word lists mapped through a vocabulary.
    pub fn builtin_sentiment(vocab: &Vocabulary) -> Lexicon {
        let lines = |text: &str| -> Vec<String> { text.lines().map(String::from).collect() };
        Self::from_word_lists(
            LexiconMode::Sentiment,
            &lines(include_str!("../../data/positive.txt")),
            &lines(include_str!("../../data/negative.txt")),
            vocab,
        )
        .expect("shipped lexicons are disjoint")
    }

    /// Shipped male/female-stereotypical word lists.
    pub fn builtin_gender(vocab: &Vocabulary) -> Lexicon {
        let lines = |text: &str| -> Vec<String> { text.lines().map(String::from).collect() };
        Self::from_word_lists(
            LexiconMode::Gender,
            &lines(include_str!("../../data/male.txt")),
            &lines(include_str!("../../data/female.txt")),
            vocab,
        )
        .expect("shipped lexicons are disjoint")
    }

    /// Lexicon with the roles exchanged.
    pub fn swapped(&self) -> Lexicon {
        Lexicon {
            mode: self.mode,
            pos_words: self.neg_words.clone(),
            neg_words: self.pos_words.clone(),
            pos_ids: self.neg_ids.clone(),
            neg_ids: self.pos_ids.clone(),
            unmapped: self.unmapped.clone(),
        }
    }

    pub fn is_positive(&self, id: u32) -> bool {
        self.pos_ids.contains(&id)
    }

    pub fn is_negative(&self, id: u32) -> bool {
        self.neg_ids.contains(&id)
    }

    pub fn positive_word(&self, word: &str) -> bool {
        self.pos_words.iter().any(|w| w == word)
    }

    pub fn negative_word(&self, word: &str) -> bool {
        self.neg_words.iter().any(|w| w == word)
    }

    /// Words whose first token did not map into the vocabulary.
    pub fn unmapped(&self) -> &[String] {
        &self.unmapped
    }
}

// ---------------------------------------------------------------------------
// Metric spec and evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    /// Positive-minus-negative top-k probability mass, in `[-1, 1]`.
    L1,
    /// Positive-only top-k probability mass, in `[0, 1]`.
    L2,
}

/// Default top-k size; measured bias stabilizes beyond ten tokens.
pub const DEFAULT_TOP_K: usize = 10;

/// A bias metric: kind, top-k size, token lexicon. Evaluated at the last
/// sequence position.
#[derive(Debug, Clone)]
pub struct BiasMetricSpec {
    pub kind: MetricKind,
    pub k: usize,
    pub lexicon: Lexicon,
}

impl BiasMetricSpec {
    pub fn new(kind: MetricKind, k: usize, lexicon: Lexicon) -> BiasMetricSpec {
        BiasMetricSpec { kind, k, lexicon }
    }

    /// Metric value of one logit matrix (top-k recomputed from these
    /// logits).
    pub fn value(&self, logits: &Array2<f64>) -> Result<f64> {
        let (pos, neg) = self.class_masses(logits)?;
        Ok(match self.kind {
            MetricKind::L1 => pos - neg,
            MetricKind::L2 => pos,
        })
    }

    /// Positive- and negative-class probability mass inside the top-k.
    /// Accumulated in token-id order so an independent brute-force scan
    /// reproduces the sums bit-exactly.
    pub fn class_masses(&self, logits: &Array2<f64>) -> Result<(f64, f64)> {
        let mut top = topk_predictions(logits, self.k)?;
        top.sort_by_key(|&(id, _)| id);
        let mut pos = 0.0;
        let mut neg = 0.0;
        for (id, p) in top {
            if self.lexicon.is_positive(id) {
                pos += p;
            } else if self.lexicon.is_negative(id) {
                neg += p;
            }
        }
        Ok((pos, neg))
    }

    /// Capture the top-k token set of these logits for differentiation.
    pub fn freeze(&self, logits: &Array2<f64>) -> Result<FrozenMetric> {
        let mut top = topk_predictions(logits, self.k)?;
        top.sort_by_key(|&(id, _)| id);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (id, _) in top {
            if self.lexicon.is_positive(id) {
                pos.push(id);
            } else if self.lexicon.is_negative(id) {
                neg.push(id);
            }
        }
        Ok(FrozenMetric { kind: self.kind, pos, neg })
    }

    /// Gradient of the metric at the logits, with the top-k membership
    /// frozen from these same logits. Nonzero only at the last position.
    pub fn gradient(&self, logits: &Array2<f64>) -> Result<Array2<f64>> {
        self.freeze(logits)?.gradient(logits)
    }
}

/// `k` highest-probability next tokens at the last position, ties broken
/// by lower token id. Probabilities come from a full-vocabulary softmax.
pub fn topk_predictions(logits: &Array2<f64>, k: usize) -> Result<Vec<(u32, f64)>> {
    let vocab = logits.ncols();
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if k > vocab {
        return Err(Error::InvalidArgument(format!(
            "k ({k}) exceeds vocabulary size ({vocab})"
        )));
    }
    if logits.nrows() == 0 {
        return Err(Error::BadSequenceLength { len: 0, max: usize::MAX });
    }
    let probs = softmax_last_row(logits);
    let mut order: Vec<u32> = (0..vocab as u32).collect();
    order.sort_by(|&a, &b| {
        probs[b as usize]
            .partial_cmp(&probs[a as usize])
            .expect("finite probabilities")
            .then_with(|| a.cmp(&b))
    });
    Ok(order.into_iter().take(k).map(|id| (id, probs[id as usize])).collect())
}

/// Softmax of the final logit row, max-subtracted.
pub fn softmax_last_row(logits: &Array2<f64>) -> Vec<f64> {
    let row = logits.row(logits.nrows() - 1);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// Signed positive-minus-negative top-k mass (kind-independent helper).
pub fn bias_l1(logits: &Array2<f64>, spec: &BiasMetricSpec) -> Result<f64> {
    let (pos, neg) = spec.class_masses(logits)?;
    Ok(pos - neg)
}

/// Positive-only top-k mass.
pub fn bias_l2(logits: &Array2<f64>, spec: &BiasMetricSpec) -> Result<f64> {
    Ok(spec.class_masses(logits)?.0)
}

/// A metric with its top-k token set pinned. The top-k selection is
/// piecewise constant in the logits, so this is the differentiable object
/// the backward pass consumes.
#[derive(Debug, Clone)]
pub struct FrozenMetric {
    kind: MetricKind,
    pos: Vec<u32>,
    neg: Vec<u32>,
}

impl FrozenMetric {
    /// Metric value with the frozen class tokens (used by the
    /// finite-difference oracle on perturbed logits).
    pub fn value(&self, logits: &Array2<f64>) -> f64 {
        let probs = softmax_last_row(logits);
        let pos: f64 = self.pos.iter().map(|&id| probs[id as usize]).sum();
        let neg: f64 = self.neg.iter().map(|&id| probs[id as usize]).sum();
        match self.kind {
            MetricKind::L1 => pos - neg,
            MetricKind::L2 => pos,
        }
    }

    /// Analytic gradient: for a frozen token set `T`,
    /// `d/dl_a sum_{j in T} p_j = p_a ([a in T] - sum_{j in T} p_j)`.
    pub fn gradient(&self, logits: &Array2<f64>) -> Result<Array2<f64>> {
        let (s, vocab) = logits.dim();
        if s == 0 {
            return Err(Error::BadSequenceLength { len: 0, max: usize::MAX });
        }
        let probs = softmax_last_row(logits);
        let pos_set: HashSet<u32> = self.pos.iter().copied().collect();
        let neg_set: HashSet<u32> = self.neg.iter().copied().collect();
        let pos_mass: f64 = self.pos.iter().map(|&id| probs[id as usize]).sum();
        let neg_mass: f64 = self.neg.iter().map(|&id| probs[id as usize]).sum();

        let mut grad = Array2::zeros((s, vocab));
        {
            let mut last = grad.row_mut(s - 1);
            for (a, g) in last.iter_mut().enumerate() {
                let p = probs[a];
                let d_pos = p * (f64::from(pos_set.contains(&(a as u32))) - pos_mass);
                *g = match self.kind {
                    MetricKind::L2 => d_pos,
                    MetricKind::L1 => {
                        d_pos - p * (f64::from(neg_set.contains(&(a as u32))) - neg_mass)
                    }
                };
            }
        }
        Ok(grad)
    }
}

// ---------------------------------------------------------------------------
// Dataset-level helpers
// ---------------------------------------------------------------------------

/// Mean per-sentence metric over clean forward passes.
pub fn mean_bias(weights: &Weights, sentences: &[Vec<u32>], spec: &BiasMetricSpec) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut total = 0.0;
    for sentence in sentences {
        total += spec.value(&weights.forward(sentence)?)?;
    }
    Ok(total / sentences.len() as f64)
}

/// Index split of a dataset by bias polarity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    /// Positive-bias (male-bias) sentence indices.
    pub positive: Vec<usize>,
    /// Negative-bias (female-bias) sentence indices.
    pub negative: Vec<usize>,
}

/// A sentence joins the positive (male) split iff its positive-class top-k
/// mass is greater than or equal to its negative-class mass.
pub fn categorize_dataset(
    weights: &Weights,
    sentences: &[Vec<u32>],
    spec: &BiasMetricSpec,
) -> Result<DatasetSplit> {
    let mut split = DatasetSplit { positive: Vec::new(), negative: Vec::new() };
    for (i, sentence) in sentences.iter().enumerate() {
        let (pos, neg) = spec.class_masses(&weights.forward(sentence)?)?;
        if pos >= neg {
            split.positive.push(i);
        } else {
            split.negative.push(i);
        }
    }
    Ok(split)
}
