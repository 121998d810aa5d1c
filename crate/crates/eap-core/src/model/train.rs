//! Plain gradient-descent trainer for the fine-tuning stability
//! experiments.

use ndarray::Array2;

use super::{ParamGrads, TensorSlot, Weights};
use crate::error::{Error, Result};
use crate::rng::NamedRng;

/// Softmax of one logit row, max-subtracted.
fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

fn validate_corpus(w: &Weights, corpus: &[Vec<u32>]) -> Result<usize> {
    if corpus.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut targets = 0usize;
    for seq in corpus {
        if seq.is_empty() || seq.len() > w.config.max_seq_len {
            return Err(Error::BadSequenceLength { len: seq.len(), max: w.config.max_seq_len });
        }
        targets += seq.len().saturating_sub(1);
    }
    if targets == 0 {
        return Err(Error::InvalidArgument(
            "corpus has no next-token targets (all sequences length 1)".into(),
        ));
    }
    Ok(targets)
}

/// Mean next-token cross-entropy over every predicting position.
pub(crate) fn mean_cross_entropy(w: &Weights, corpus: &[Vec<u32>]) -> Result<f64> {
    let targets = validate_corpus(w, corpus)?;
    let mut total = 0.0;
    for seq in corpus {
        if seq.len() < 2 {
            continue;
        }
        let logits = w.forward(seq)?;
        for pos in 0..seq.len() - 1 {
            let probs = softmax_row(logits.row(pos).as_slice().unwrap());
            total -= probs[seq[pos + 1] as usize].ln();
        }
    }
    Ok(total / targets as f64)
}

/// One full-batch pass: mean cross-entropy and its parameter gradients.
fn loss_and_grads(w: &Weights, corpus: &[&Vec<u32>], targets: usize) -> Result<(f64, ParamGrads)> {
    let mut grads = ParamGrads::zeros(&w.config);
    let mut total = 0.0;
    let norm = 1.0 / targets as f64;
    for seq in corpus {
        if seq.len() < 2 {
            continue;
        }
        let run = w.forward_captured(seq)?;
        let mut dlogits = Array2::zeros(run.logits().dim());
        for pos in 0..seq.len() - 1 {
            let probs = softmax_row(run.logits().row(pos).as_slice().unwrap());
            let target = seq[pos + 1] as usize;
            total -= probs[target].ln();
            for (v, p) in dlogits.row_mut(pos).iter_mut().zip(probs) {
                *v = p * norm;
            }
            dlogits[[pos, target]] -= norm;
        }
        let g = w.backward(&run, &dlogits)?;
        grads.add_assign(&g.params);
    }
    Ok((total * norm, grads))
}

/// Gradient descent on mean next-token cross-entropy. The seed fixes the
/// corpus accumulation order (and with it the exact floating-point
/// rounding), so a given `(corpus, steps, learning_rate, seed)` always
/// returns bit-identical weights. Zero steps or a zero learning rate
/// return the input weights untouched.
pub(crate) fn fine_tune(
    w: &Weights,
    corpus: &[Vec<u32>],
    steps: usize,
    learning_rate: f64,
    seed: u64,
) -> Result<Weights> {
    let targets = validate_corpus(w, corpus)?;
    let mut weights = w.clone();
    if steps == 0 || learning_rate == 0.0 {
        return Ok(weights);
    }

    // deterministic accumulation order from the seed (Fisher-Yates)
    let mut order: Vec<&Vec<u32>> = corpus.iter().collect();
    let mut rng = NamedRng::new(seed, "finetune.order");
    for i in (1..order.len()).rev() {
        order.swap(i, rng.index(i + 1));
    }

    for _ in 0..steps {
        let (_, grads) = loss_and_grads(&weights, &order, targets)?;
        for slot in TensorSlot::all(&weights.config) {
            let g = grads.tensors().slot_slice(slot).to_vec();
            for (wv, gv) in weights.slot_mut(slot).iter_mut().zip(g) {
                *wv -= learning_rate * gv;
            }
        }
    }
    Ok(weights)
}
