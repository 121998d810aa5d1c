//! Localization and stability post-processing: layer histograms of
//! important edges, metric-drop-vs-ablation curves, top-k overlap
//! matrices, and pre/post-fine-tuning comparisons.

use std::collections::HashSet;
use std::fs::File;
use std::path::Path;

use rayon::prelude::*;

use crate::attribution::{eap_scores, evaluate_graph};
use crate::corpus::ExamplePair;
use crate::error::{Error, Result};
use crate::graph::{rank_order, CircuitGraph, Edge, EdgeId};
use crate::metrics::BiasMetricSpec;
use crate::model::Weights;
use crate::rng::NamedRng;

// ---------------------------------------------------------------------------
// Layer histogram
// ---------------------------------------------------------------------------

/// Per-layer counts of important edges. An edge belongs to the layer of
/// its destination node; logits edges land in bucket `n_layers`.
#[derive(Debug, Clone)]
pub struct LayerHistogram {
    /// `n_layers + 1` buckets, the last one for logits destinations.
    pub counts: Vec<usize>,
    pub shares: Vec<f64>,
    /// True where a layer's share strictly exceeds the report threshold.
    pub flagged: Vec<bool>,
    pub selected_edges: usize,
    pub threshold: f64,
}

/// Bucket the top `ceil(fraction * |edges|)` edges by |score| into
/// destination layers, flagging layers whose share strictly exceeds
/// `threshold` (the headline report uses 0.20).
pub fn layer_histogram(
    graph: &CircuitGraph,
    top_fraction: f64,
    threshold: f64,
) -> Result<LayerHistogram> {
    if !(top_fraction > 0.0 && top_fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "top_fraction must be in (0, 1], got {top_fraction}"
        )));
    }
    let n_layers = graph.topology().n_layers();
    let take = (top_fraction * graph.edge_count() as f64).ceil() as usize;
    let order = rank_order(graph.edges());
    let mut counts = vec![0usize; n_layers + 1];
    for &i in order.iter().take(take) {
        let dest = graph.edges()[i].id.dst.node();
        let bucket = dest.layer().unwrap_or(n_layers);
        counts[bucket] += 1;
    }
    let shares: Vec<f64> = counts.iter().map(|&c| c as f64 / take as f64).collect();
    let flagged: Vec<bool> = shares.iter().map(|&s| s > threshold).collect();
    Ok(LayerHistogram { counts, shares, flagged, selected_edges: take, threshold })
}

/// CSV rows `layer,count,share,flag`; the logits bucket is labelled
/// `logits`.
pub fn write_histogram_csv(hist: &LayerHistogram, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_writer(File::create(path)?);
    writer.write_record(["layer", "count", "share", "flag"])?;
    let last = hist.counts.len() - 1;
    for (layer, ((&count, &share), &flag)) in
        hist.counts.iter().zip(&hist.shares).zip(&hist.flagged).enumerate()
    {
        let label = if layer == last { "logits".to_string() } else { layer.to_string() };
        writer.write_record([label, count.to_string(), share.to_string(), flag.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Ablation curve
// ---------------------------------------------------------------------------

/// For each fraction `f`, evaluate the circuit containing all edges
/// except the top `ceil(f * |edges|)` by |score|: the out-of-circuit
/// (ablated) edges carry corrupted activations. `f = 0` reproduces the
/// baseline; `f = 1` the pure corrupt-run metric.
pub fn ablation_curve(
    weights: &Weights,
    pairs: &[ExamplePair],
    spec: &BiasMetricSpec,
    graph: &CircuitGraph,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("fraction list is empty".into()));
    }
    for f in fractions {
        if !(0.0..=1.0).contains(f) {
            return Err(Error::InvalidArgument(format!("fraction {f} outside [0, 1]")));
        }
    }
    let order = rank_order(graph.edges());
    let mut curve = Vec::with_capacity(fractions.len());
    for &f in fractions {
        let ablate = (f * graph.edge_count() as f64).ceil() as usize;
        let keep: Vec<EdgeId> =
            order.iter().skip(ablate).map(|&i| graph.edges()[i].id).collect();
        let mut circuit = graph.clone();
        circuit.select_circuit(&keep)?;
        curve.push((f, evaluate_graph(weights, pairs, spec, &circuit)?));
    }
    Ok(curve)
}

/// Metric after ablating `n_ablate` uniformly chosen edges (seeded); the
/// comparison baseline for attribution-guided ablation.
pub fn random_ablation_value(
    weights: &Weights,
    pairs: &[ExamplePair],
    spec: &BiasMetricSpec,
    graph: &CircuitGraph,
    n_ablate: usize,
    seed: u64,
) -> Result<f64> {
    if n_ablate > graph.edge_count() {
        return Err(Error::InvalidArgument(format!(
            "cannot ablate {n_ablate} of {} edges",
            graph.edge_count()
        )));
    }
    let mut indices: Vec<usize> = (0..graph.edge_count()).collect();
    let mut rng = NamedRng::new(seed, "random.ablation");
    for i in (1..indices.len()).rev() {
        indices.swap(i, rng.index(i + 1));
    }
    let keep: Vec<EdgeId> =
        indices[n_ablate..].iter().map(|&i| graph.edges()[i].id).collect();
    let mut circuit = graph.clone();
    circuit.select_circuit(&keep)?;
    evaluate_graph(weights, pairs, spec, &circuit)
}

/// CSV rows `fraction,metric`.
pub fn write_curve_csv(curve: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_writer(File::create(path)?);
    writer.write_record(["fraction", "metric"])?;
    for (f, v) in curve {
        writer.write_record([f.to_string(), v.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Top-k overlap
// ---------------------------------------------------------------------------

/// `|topk(a) ∩ topk(b)| / k` on edge identity (rank-agnostic). Both lists
/// must already be rank-ordered and at least `k` long.
pub fn overlap_topk(a: &[EdgeId], b: &[EdgeId], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if a.len() < k || b.len() < k {
        return Err(Error::InvalidArgument(format!(
            "need at least k = {k} edges per list (got {} and {})",
            a.len(),
            b.len()
        )));
    }
    let top_a: HashSet<&EdgeId> = a[..k].iter().collect();
    let shared = b[..k].iter().filter(|id| top_a.contains(id)).count();
    Ok(shared as f64 / k as f64)
}

/// Square top-k overlap matrix across named edge rankings.
#[derive(Debug, Clone)]
pub struct OverlapMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub k: usize,
}

pub fn overlap_matrix(named: &[(String, Vec<EdgeId>)], k: usize) -> Result<OverlapMatrix> {
    if named.len() < 2 {
        return Err(Error::InvalidArgument(
            "overlap matrix needs at least two configurations".into(),
        ));
    }
    let n = named.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = overlap_topk(&named[i].1, &named[j].1, k)?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    Ok(OverlapMatrix {
        labels: named.iter().map(|(l, _)| l.clone()).collect(),
        values,
        k,
    })
}

/// CSV with header labels in input order.
pub fn write_matrix_csv(matrix: &OverlapMatrix, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_writer(File::create(path)?);
    let mut header = vec![String::new()];
    header.extend(matrix.labels.iter().cloned());
    writer.write_record(&header)?;
    for (label, row) in matrix.labels.iter().zip(&matrix.values) {
        let mut record = vec![label.clone()];
        record.extend(row.iter().map(f64::to_string));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Rank-ordered edge ids of a scored graph (the input `overlap_topk`
/// expects).
pub fn ranked_edge_ids(graph: &CircuitGraph) -> Vec<EdgeId> {
    rank_order(graph.edges()).into_iter().map(|i| graph.edges()[i].id).collect()
}

/// Rank edges parsed from score rows (e.g. a scores CSV) by |score|
/// descending, ties by name.
pub fn ranked_ids_from_scores(scores: &[(String, f64)]) -> Result<Vec<EdgeId>> {
    let mut edges = Vec::with_capacity(scores.len());
    for (name, score) in scores {
        edges.push(Edge { id: EdgeId::parse(name)?, score: *score, in_graph: true, rank: None });
    }
    Ok(rank_order(&edges).into_iter().map(|i| edges[i].id).collect())
}

// ---------------------------------------------------------------------------
// Fine-tuning stability
// ---------------------------------------------------------------------------

/// Top-k agreement between attribution runs under two weight sets.
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub overlap: f64,
    pub k: usize,
    pub top_before: Vec<String>,
    pub top_after: Vec<String>,
}

/// Run EAP under both weight sets on the same pairs and report the top-k
/// edge overlap. The configs must match.
pub fn finetune_stability(
    weights_before: &Weights,
    weights_after: &Weights,
    pairs: &[ExamplePair],
    spec: &BiasMetricSpec,
    k: usize,
) -> Result<StabilityReport> {
    if weights_before.config != weights_after.config {
        return Err(Error::Config("fine-tuned weights have a different architecture".into()));
    }
    let mut graph_before = CircuitGraph::build(&weights_before.config)?;
    eap_scores(weights_before, pairs, spec)?.apply(&mut graph_before)?;
    let mut graph_after = graph_before.clone();
    eap_scores(weights_after, pairs, spec)?.apply(&mut graph_after)?;

    let before = ranked_edge_ids(&graph_before);
    let after = ranked_edge_ids(&graph_after);
    let overlap = overlap_topk(&before, &after, k)?;
    Ok(StabilityReport {
        overlap,
        k,
        top_before: before[..k].iter().map(EdgeId::name).collect(),
        top_after: after[..k].iter().map(EdgeId::name).collect(),
    })
}

/// Sample Pearson correlation between two equal-length sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson needs two equal-length sequences of at least 2 values".into(),
        ));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - mean_a) * (y - mean_b);
        var_a += (x - mean_a) * (x - mean_a);
        var_b += (y - mean_b) * (y - mean_b);
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::InvalidArgument("pearson undefined for constant sequences".into()));
    }
    Ok(cov / (var_a * var_b).sqrt())
}

/// Evaluate curve points in parallel (used by the CLI's localize command
/// when many fractions are requested).
pub fn ablation_curve_parallel(
    weights: &Weights,
    pairs: &[ExamplePair],
    spec: &BiasMetricSpec,
    graph: &CircuitGraph,
    fractions: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if fractions.is_empty() {
        return Err(Error::InvalidArgument("fraction list is empty".into()));
    }
    let order = rank_order(graph.edges());
    fractions
        .par_iter()
        .map(|&f| {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidArgument(format!("fraction {f} outside [0, 1]")));
            }
            let ablate = (f * graph.edge_count() as f64).ceil() as usize;
            let keep: Vec<EdgeId> =
                order.iter().skip(ablate).map(|&i| graph.edges()[i].id).collect();
            let mut circuit = graph.clone();
            circuit.select_circuit(&keep)?;
            Ok((f, evaluate_graph(weights, pairs, spec, &circuit)?))
        })
        .collect()
}
