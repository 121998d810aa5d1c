//! EAP edge scores, the exact-patching oracle, and circuit evaluation.
//!
//! The EAP score of an edge is the first-order estimate of its causal
//! effect: two forward passes (clean captured, corrupted captured) and one
//! backward pass of the metric on the clean run give, per edge,
//! `(corrupted source activation - clean source activation) . (metric
//! gradient at the destination port)`, summed over sequence positions and
//! residual dimensions and averaged over pairs. The exact counterpart
//! reruns the model with a single edge patched and takes the metric
//! difference — the brute-force oracle the approximation is checked
//! against.

use std::fs::File;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ExamplePair;
use crate::error::{Error, Result};
use crate::graph::{rank_order, CircuitGraph, Edge, EdgeId, Topology};
use crate::metrics::BiasMetricSpec;
use crate::model::{ActivationCache, PatchSet, Weights};

/// Per-edge signed EAP scores in the canonical edge order of the model's
/// topology, averaged over `pair_count` example pairs.
#[derive(Debug, Clone)]
pub struct AttributionResult {
    pub scores: Vec<f64>,
    pub pair_count: usize,
}

impl AttributionResult {
    /// Install the scores on a graph (and recompute ranks).
    pub fn apply(&self, graph: &mut CircuitGraph) -> Result<()> {
        graph.set_scores(&self.scores)
    }
}

fn check_pairs(pairs: &[ExamplePair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for pair in pairs {
        if pair.clean.len() != pair.corrupt.len() {
            return Err(Error::LengthMismatch {
                clean: pair.clean.len(),
                corrupt: pair.corrupt.len(),
            });
        }
    }
    Ok(())
}

/// Per-pair edge scores for one example pair.
fn pair_scores(
    weights: &Weights,
    topology: &Topology,
    pair: &ExamplePair,
    spec: &BiasMetricSpec,
) -> Result<Vec<f64>> {
    let clean = weights.forward_captured(&pair.clean)?;
    let corr = weights.forward_captured(&pair.corrupt)?;
    let dlogits = spec.gradient(clean.logits())?;
    let grads = weights.backward(&clean, &dlogits)?;

    // contribution deltas once per source node, dot products per edge
    let deltas: Vec<Array2<f64>> = (0..topology.source_node_count())
        .map(|n| corr.cache().contribution_by_index(n) - clean.cache().contribution_by_index(n))
        .collect();

    let mut scores = Vec::with_capacity(topology.edge_count());
    for port_idx in 0..topology.port_count() {
        let port = topology.port_at(port_idx);
        let grad = grads.port(port);
        for delta in deltas.iter().take(topology.upstream_sources(port)) {
            scores.push((delta * grad).sum());
        }
    }
    Ok(scores)
}

/// EAP scores for every edge, averaged over the dataset. Pairs are
/// processed in parallel; the reduction runs in pair order, so results do
/// not depend on thread count or scheduling.
pub fn eap_scores(
    weights: &Weights,
    pairs: &[ExamplePair],
    spec: &BiasMetricSpec,
) -> Result<AttributionResult> {
    check_pairs(pairs)?;
    let topology = weights.topology();
    let per_pair: Vec<Result<Vec<f64>>> = pairs
        .par_iter()
        .map(|pair| pair_scores(weights, &topology, pair, spec))
        .collect();

    let mut total = vec![0.0f64; topology.edge_count()];
    for scores in per_pair {
        for (t, s) in total.iter_mut().zip(scores?) {
            *t += s;
        }
    }
    let m = pairs.len() as f64;
    for t in &mut total {
        *t /= m;
    }
    Ok(AttributionResult { scores: total, pair_count: pairs.len() })
}

/// Exact patch delta of one edge using a precomputed corrupted cache:
/// `metric(patched clean run) - metric(clean run)`. The magnitude of this
/// signed value is the exact causal score the EAP estimate approximates.
pub fn exact_patch_score_with_cache(
    weights: &Weights,
    clean_tokens: &[u32],
    cache_corr: &ActivationCache,
    spec: &BiasMetricSpec,
    edge: &EdgeId,
) -> Result<f64> {
    let topology = weights.topology();
    let set = PatchSet::from_edges(&topology, [edge])?;
    let patched = weights.forward_patched(clean_tokens, cache_corr, &set)?;
    let baseline = weights.forward(clean_tokens)?;
    Ok(spec.value(&patched)? - spec.value(&baseline)?)
}

/// Exact patch delta of one edge for an example pair.
pub fn exact_patch_score(
    weights: &Weights,
    pair: &ExamplePair,
    spec: &BiasMetricSpec,
    edge: &EdgeId,
) -> Result<f64> {
    if pair.clean.len() != pair.corrupt.len() {
        return Err(Error::LengthMismatch {
            clean: pair.clean.len(),
            corrupt: pair.corrupt.len(),
        });
    }
    let corr = weights.forward_captured(&pair.corrupt)?;
    exact_patch_score_with_cache(weights, &pair.clean, corr.cache(), spec, edge)
}

/// Exact patch deltas for every edge of the graph (one corrupted capture,
/// one patched rerun per edge, parallel over edges). Canonical edge order.
///
/// Note that the deltas do not add up: summing all single-edge deltas
/// approximates the full corrupt-vs-clean metric difference only in the
/// linear regime, since edge effects compose through downstream
/// nonlinearities. No code here relies on that sum.
pub fn exact_patch_sweep(
    weights: &Weights,
    pair: &ExamplePair,
    spec: &BiasMetricSpec,
) -> Result<Vec<f64>> {
    if pair.clean.len() != pair.corrupt.len() {
        return Err(Error::LengthMismatch {
            clean: pair.clean.len(),
            corrupt: pair.corrupt.len(),
        });
    }
    let topology = weights.topology();
    let corr = weights.forward_captured(&pair.corrupt)?;
    let baseline = spec.value(&weights.forward(&pair.clean)?)?;
    let edge_ids: Vec<EdgeId> = topology.edge_ids().collect();
    edge_ids
        .par_iter()
        .map(|edge| {
            let set = PatchSet::from_edges(&topology, [edge])?;
            let patched = weights.forward_patched(&pair.clean, corr.cache(), &set)?;
            Ok(spec.value(&patched)? - baseline)
        })
        .collect()
}

/// Mean metric over clean forward passes — the evaluate-baseline score.
pub fn evaluate_baseline(
    weights: &Weights,
    pairs: &[ExamplePair],
    spec: &BiasMetricSpec,
) -> Result<f64> {
    check_pairs(pairs)?;
    let values: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|pair| spec.value(&weights.forward(&pair.clean)?))
        .collect();
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / pairs.len() as f64)
}

/// Mean metric with every out-of-circuit edge patched to its corrupted
/// activation — the evaluate-graph score. With all edges in-graph this
/// equals the baseline; with none, the pure corrupt-run metric.
pub fn evaluate_graph(
    weights: &Weights,
    pairs: &[ExamplePair],
    spec: &BiasMetricSpec,
    graph: &CircuitGraph,
) -> Result<f64> {
    check_pairs(pairs)?;
    let patch = PatchSet::out_of_circuit(graph);
    let values: Vec<Result<f64>> = pairs
        .par_iter()
        .map(|pair| {
            let corr = weights.forward_captured(&pair.corrupt)?;
            let patched = weights.forward_patched(&pair.clean, corr.cache(), &patch)?;
            spec.value(&patched)
        })
        .collect();
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / pairs.len() as f64)
}

/// The "Change in Metric" statistic: `|baseline - circuit value|`.
pub fn metric_change(baseline: f64, circuit_value: f64) -> f64 {
    (baseline - circuit_value).abs()
}

// ---------------------------------------------------------------------------
// Score dump CSV
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ScoreRow {
    pub edge_name: String,
    pub score: f64,
    pub rank: Option<usize>,
    pub in_graph: bool,
}

/// `edge_name,score,rank,in_graph` rows ordered by rank then name.
pub fn write_scores_csv(graph: &CircuitGraph, path: &Path) -> Result<()> {
    let order = rank_order(graph.edges());
    let mut writer = csv::Writer::from_writer(File::create(path)?);
    for i in order {
        let edge: &Edge = &graph.edges()[i];
        writer.serialize(ScoreRow {
            edge_name: edge.id.name(),
            score: edge.score,
            rank: edge.rank,
            in_graph: edge.in_graph,
        })?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut reader = csv::Reader::from_reader(File::open(path)?);
    let mut rows = Vec::new();
    for record in reader.deserialize() {
        let row: ScoreRow = record?;
        EdgeId::parse(&row.edge_name)?;
        rows.push(row);
    }
    Ok(rows)
}
