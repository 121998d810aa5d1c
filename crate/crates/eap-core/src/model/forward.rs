//! The forward engine.
//!
//! Every destination port's input is assembled as an explicit sum over
//! upstream node contributions in node order. Plain, patched, and
//! offset-probed passes all share this one assembly loop, which is what
//! makes the boundary identities bit-exact: an empty patch set adds the
//! same floats in the same order as a plain forward, and a full patch set
//! adds exactly the corrupted run's floats.

use ndarray::{Array1, Array2};

use super::math::{gelu, layer_norm};
use super::{ActivationCache, PatchSet, Weights};
use crate::error::{Error, Result};
use crate::graph::{DestPort, Qkv, Topology};

pub(crate) enum Intervention<'a> {
    None,
    Patch { corr: &'a ActivationCache, set: &'a PatchSet },
    Offset { port: usize, delta: &'a Array2<f64> },
}

/// Internals cached for the backward pass.
pub(crate) struct Trace {
    pub tokens: Vec<u32>,
    pub port_inputs: Vec<Array2<f64>>,
    pub heads: Vec<HeadTrace>,
    pub mlps: Vec<MlpTrace>,
    pub final_out: FinalTrace,
}

pub(crate) struct HeadTrace {
    /// Post-layernorm port inputs (equal to the raw inputs when layernorm
    /// is disabled).
    pub xq: Array2<f64>,
    pub xk: Array2<f64>,
    pub xv: Array2<f64>,
    /// Per-row `1/sqrt(var+eps)` of each port's layernorm, when enabled.
    pub inv_std_q: Option<Array1<f64>>,
    pub inv_std_k: Option<Array1<f64>>,
    pub inv_std_v: Option<Array1<f64>>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Causal attention pattern; entries above the diagonal are zero.
    pub probs: Array2<f64>,
    pub z: Array2<f64>,
}

pub(crate) struct MlpTrace {
    pub x: Array2<f64>,
    pub inv_std: Option<Array1<f64>>,
    pub pre: Array2<f64>,
    pub act: Array2<f64>,
}

pub(crate) struct FinalTrace {
    /// What multiplies the unembedding (post layernorm scale/shift).
    pub x: Array2<f64>,
    /// Normalized rows before scale/shift, when layernorm is enabled.
    pub y: Option<Array2<f64>>,
    pub inv_std: Option<Array1<f64>>,
}

pub(crate) struct EngineOut {
    pub logits: Array2<f64>,
    pub contributions: Vec<Array2<f64>>,
    pub trace: Trace,
}

pub(crate) fn run(w: &Weights, tokens: &[u32], intervention: Intervention) -> Result<EngineOut> {
    let c = &w.config;
    let s = tokens.len();
    if s == 0 || s > c.max_seq_len {
        return Err(Error::BadSequenceLength { len: s, max: c.max_seq_len });
    }
    for &t in tokens {
        if t as usize >= c.vocab_size {
            return Err(Error::TokenOutOfRange { id: t, vocab_size: c.vocab_size });
        }
    }
    match &intervention {
        Intervention::Patch { corr, .. } => {
            if corr.seq_len() != s {
                return Err(Error::LengthMismatch { clean: s, corrupt: corr.seq_len() });
            }
            if corr.d_model() != c.d_model {
                return Err(Error::InvalidArgument("corrupted cache has wrong d_model".into()));
            }
        }
        Intervention::Offset { delta, .. } => {
            if delta.dim() != (s, c.d_model) {
                return Err(Error::InvalidArgument(format!(
                    "offset shape {:?} != ({s}, {})",
                    delta.dim(),
                    c.d_model
                )));
            }
        }
        Intervention::None => {}
    }

    let topology = w.topology();
    let scale = 1.0 / (c.d_head as f64).sqrt();
    let mut contributions: Vec<Array2<f64>> = Vec::with_capacity(topology.source_node_count());
    let mut port_inputs: Vec<Array2<f64>> = Vec::with_capacity(topology.port_count());
    let mut heads = Vec::with_capacity(c.n_layers * c.n_heads);
    let mut mlps = Vec::with_capacity(c.n_layers);

    // input node: token + positional embedding
    let mut input = Array2::zeros((s, c.d_model));
    for (pos, &tok) in tokens.iter().enumerate() {
        let e = w.token_embed.row(tok as usize);
        let p = w.pos_embed.row(pos);
        for ((out, &a), &b) in input.row_mut(pos).iter_mut().zip(e.iter()).zip(p.iter()) {
            *out = a + b;
        }
    }
    contributions.push(input);

    let assemble = |contributions: &Vec<Array2<f64>>, port: DestPort| -> Array2<f64> {
        let port_idx = topology.port_index(port);
        let upstream = topology.upstream_sources(port);
        let mut acc = Array2::zeros((s, c.d_model));
        for (u, own) in contributions.iter().take(upstream).enumerate() {
            let contrib = match &intervention {
                Intervention::Patch { corr, set } if set.contains_indices(u, port_idx) => {
                    corr.contribution_by_index(u)
                }
                _ => own,
            };
            acc += contrib;
        }
        if let Intervention::Offset { port: p, delta } = &intervention {
            if *p == port_idx {
                acc += *delta;
            }
        }
        acc
    };

    let maybe_ln = |r: &Array2<f64>| -> (Array2<f64>, Option<Array1<f64>>) {
        if c.layernorm_enabled {
            let (y, inv) = layer_norm(&r.view(), c.ln_epsilon);
            (y, Some(inv))
        } else {
            (r.clone(), None)
        }
    };

    for layer in 0..c.n_layers {
        for head in 0..c.n_heads {
            let hw = &w.layers[layer].heads[head];
            let rq = assemble(&contributions, DestPort::Head { layer, head, slot: Qkv::Q });
            let rk = assemble(&contributions, DestPort::Head { layer, head, slot: Qkv::K });
            let rv = assemble(&contributions, DestPort::Head { layer, head, slot: Qkv::V });
            let (xq, inv_std_q) = maybe_ln(&rq);
            let (xk, inv_std_k) = maybe_ln(&rk);
            let (xv, inv_std_v) = maybe_ln(&rv);
            port_inputs.push(rq);
            port_inputs.push(rk);
            port_inputs.push(rv);

            let q = xq.dot(&hw.w_q);
            let k = xk.dot(&hw.w_k);
            let v = xv.dot(&hw.w_v);

            let mut probs = Array2::zeros((s, s));
            for i in 0..s {
                let qi = q.row(i);
                let mut row_max = f64::NEG_INFINITY;
                let mut scores = Vec::with_capacity(i + 1);
                for j in 0..=i {
                    let score = qi.dot(&k.row(j)) * scale;
                    row_max = row_max.max(score);
                    scores.push(score);
                }
                let mut denom = 0.0;
                for score in &mut scores {
                    *score = (*score - row_max).exp();
                    denom += *score;
                }
                for (j, e) in scores.into_iter().enumerate() {
                    probs[[i, j]] = e / denom;
                }
            }

            let z = probs.dot(&v);
            contributions.push(z.dot(&hw.w_o));
            heads.push(HeadTrace {
                xq,
                xk,
                xv,
                inv_std_q,
                inv_std_k,
                inv_std_v,
                q,
                k,
                v,
                probs,
                z,
            });
        }

        let lw = &w.layers[layer];
        let r = assemble(&contributions, DestPort::Mlp { layer });
        let (x, inv_std) = maybe_ln(&r);
        port_inputs.push(r);
        let pre = x.dot(&lw.mlp_in) + &lw.mlp_in_bias;
        let act = pre.mapv(gelu);
        contributions.push(act.dot(&lw.mlp_out) + &lw.mlp_out_bias);
        mlps.push(MlpTrace { x, inv_std, pre, act });
    }

    let r_logits = assemble(&contributions, DestPort::Logits);
    let final_out = match (&w.final_ln, c.layernorm_enabled) {
        (Some(ln), true) => {
            let (y, inv) = layer_norm(&r_logits.view(), c.ln_epsilon);
            let x = &y * &ln.scale + &ln.shift;
            FinalTrace { x, y: Some(y), inv_std: Some(inv) }
        }
        _ => FinalTrace { x: r_logits.clone(), y: None, inv_std: None },
    };
    port_inputs.push(r_logits);
    let logits = final_out.x.dot(&w.unembed);

    Ok(EngineOut {
        logits,
        contributions,
        trace: Trace { tokens: tokens.to_vec(), port_inputs, heads, mlps, final_out },
    })
}

pub(crate) fn head_trace_index(topology: &Topology, layer: usize, head: usize) -> usize {
    layer * topology.n_heads() + head
}
