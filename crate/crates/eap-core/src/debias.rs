//! Inference-time debiasing.
//!
//! Substitutes corrupted activations along the top-N bias edges while the
//! rest of the model runs on clean activations, then measures the change
//! in bias. No parameters move and no gradients are needed.

use serde::{Deserialize, Serialize};

use ndarray::Array2;

use crate::corpus::{word_swap_tokens, ExamplePair, TemplateSpec, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::{rank_order, Edge, EdgeId};
use crate::metrics::BiasMetricSpec;
use crate::model::{PatchSet, Weights};

/// Fixed seed for the word-swap fallback of [`auto_corrupt`], so repeated
/// runs corrupt an unregistered input identically.
pub const AUTO_CORRUPT_SEED: u64 = 0xEA9C0DE;

/// Top `n` of the bias edges by |score| (ties by name) — the patch set
/// debiasing applies.
pub fn top_n_edges(bias_edges: &[Edge], n: usize) -> Result<Vec<EdgeId>> {
    if n > bias_edges.len() {
        return Err(Error::InvalidArgument(format!(
            "n = {n} exceeds the {} supplied bias edges",
            bias_edges.len()
        )));
    }
    Ok(rank_order(bias_edges).into_iter().take(n).map(|i| bias_edges[i].id).collect())
}

/// Default patch budget for a graph of `edge_count` edges: 1% of the
/// edges, rounded up — the proportional regime of the published runs
/// (400/1000/3000 edges on ~32K/811K/1.6M-edge graphs).
pub fn default_patch_count(edge_count: usize) -> usize {
    (0.01 * edge_count as f64).ceil() as usize
}

/// Run the corrupted input to fill a cache, then the clean input with the
/// top-N bias edges patched. `n = 0` is bit-identical to the plain clean
/// forward; patching every edge of the graph is bit-identical to the
/// plain corrupt forward.
pub fn debias_forward(
    weights: &Weights,
    clean: &[u32],
    corrupt: &[u32],
    bias_edges: &[Edge],
    n: usize,
) -> Result<Array2<f64>> {
    if clean.len() != corrupt.len() {
        return Err(Error::LengthMismatch { clean: clean.len(), corrupt: corrupt.len() });
    }
    let topology = weights.topology();
    let top = top_n_edges(bias_edges, n)?;
    let patch = PatchSet::from_edges(&topology, top.iter())?;
    let corr = weights.forward_captured(corrupt)?;
    weights.forward_patched(clean, corr.cache(), &patch)
}

/// Per-pair bias before and after patching.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairBias {
    pub clean_text: String,
    pub bias_clean: f64,
    pub bias_patched: f64,
}

/// Debias run summary. `delta_percent` is
/// `100 * (bias_patched - bias_clean) / bias_clean`, negative when bias
/// dropped; it is `None` (reported as undefined, not an error) when the
/// clean bias is zero.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebiasReport {
    pub n_edges_patched: usize,
    pub bias_clean: f64,
    pub bias_patched: f64,
    pub delta_percent: Option<f64>,
    pub per_pair: Vec<PairBias>,
}

/// Mean bias over the pairs with and without the top-N patch, and the
/// signed percentage change.
pub fn delta_bias(
    weights: &Weights,
    pairs: &[ExamplePair],
    spec: &BiasMetricSpec,
    bias_edges: &[Edge],
    n: usize,
) -> Result<DebiasReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let topology = weights.topology();
    let top = top_n_edges(bias_edges, n)?;
    let patch = PatchSet::from_edges(&topology, top.iter())?;

    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut clean_total = 0.0;
    let mut patched_total = 0.0;
    for pair in pairs {
        if pair.clean.len() != pair.corrupt.len() {
            return Err(Error::LengthMismatch {
                clean: pair.clean.len(),
                corrupt: pair.corrupt.len(),
            });
        }
        let bias_clean = spec.value(&weights.forward(&pair.clean)?)?;
        let corr = weights.forward_captured(&pair.corrupt)?;
        let patched_logits = weights.forward_patched(&pair.clean, corr.cache(), &patch)?;
        let bias_patched = spec.value(&patched_logits)?;
        clean_total += bias_clean;
        patched_total += bias_patched;
        per_pair.push(PairBias {
            clean_text: pair.clean_text.clone(),
            bias_clean,
            bias_patched,
        });
    }
    let bias_clean = clean_total / pairs.len() as f64;
    let bias_patched = patched_total / pairs.len() as f64;
    let delta_percent =
        (bias_clean != 0.0).then(|| 100.0 * (bias_patched - bias_clean) / bias_clean);
    Ok(DebiasReport {
        n_edges_patched: n,
        bias_clean,
        bias_patched,
        delta_percent,
        per_pair,
    })
}

/// Build a length-matched corrupted input for an arbitrary clean input.
/// When the tokens instantiate a registered template (all non-slot tokens
/// match), the slot token is replaced with the template's C2 token;
/// otherwise two token positions are swapped with a fixed seed. Inputs
/// shorter than two tokens come back unchanged.
pub fn auto_corrupt(
    clean: &[u32],
    registry: &[TemplateSpec],
    vocab: &Vocabulary,
) -> Vec<u32> {
    for template in registry {
        if template.validate().is_err() {
            continue;
        }
        let Some((prefix_pat, suffix_pat)) = template.pattern.split_once("{}") else {
            continue;
        };
        let prefix = vocab.tokenize(prefix_pat);
        let suffix = vocab.tokenize(suffix_pat);
        if clean.len() != prefix.len() + 1 + suffix.len() {
            continue;
        }
        if clean[..prefix.len()] != prefix[..] || clean[prefix.len() + 1..] != suffix[..] {
            continue;
        }
        let replacement = vocab.tokenize(template.replacement(crate::corpus::CorruptionMode::C2));
        if replacement.len() != 1 {
            continue;
        }
        let mut corrupted = clean.to_vec();
        corrupted[prefix.len()] = replacement[0];
        return corrupted;
    }
    word_swap_tokens(clean, AUTO_CORRUPT_SEED)
}
