//! Published full-scale reference values.
//!
//! These numbers come from runs of the method on pretrained GPT-2 and
//! Llama-2 checkpoints at billions of parameters. They are recorded here
//! for documentation and comparison only — the desk-scale models this
//! crate trains do not and cannot reproduce them, and nothing in the test
//! suite asserts them against computed results. The graph-size constants,
//! by contrast, are exact and are verified by `CircuitGraph::build`.

/// GPT-2 Small architecture: (layers, heads, nodes, edges).
pub const GPT2_SMALL_GRAPH: (usize, usize, usize, usize) = (12, 12, 158, 32491);

/// GPT-2 Large architecture: (layers, heads, nodes, edges).
pub const GPT2_LARGE_GRAPH: (usize, usize, usize, usize) = (36, 20, 758, 810703);

/// Llama-2 architecture: (layers, heads, nodes, edges).
pub const LLAMA2_GRAPH: (usize, usize, usize, usize) = (32, 32, 1058, 1592881);

/// Change in metric for GPT-2 Small, DSS1-positive, L2 metric with C2
/// corruption — full-scale reference, not a desk-scale target.
pub const GPT2_SMALL_DSS1_POS_L2_C2_METRIC_CHANGE: f64 = 0.0404;

/// Bias reduction (percent) for GPT-2 Small on DSS1 when its top 400
/// edges carry corrupted activations — full-scale reference only.
pub const GPT2_SMALL_DSS1_TOP400_BIAS_DROP_PERCENT: f64 = 35.88;

/// Edge counts patched in the full-scale debiasing runs, per model.
pub const FULL_SCALE_DEBIAS_EDGE_COUNTS: [usize; 3] = [400, 1000, 3000];

/// Bias metric of the GPT-2 Small DSS1-positive split — full-scale
/// reference only.
pub const GPT2_SMALL_DSS1_POS_BIAS: f64 = 0.659;

/// Top-scoring edge of the GPT-2 Small demographic-positive circuit, with
/// its published score.
pub const GPT2_SMALL_DSS1_POS_TOP_EDGE: (&str, f64) = ("m11->logits", 0.3307);
