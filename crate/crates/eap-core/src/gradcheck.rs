//! Finite-difference oracles for the reverse-mode pass.
//!
//! These helpers never call `backward`; they probe the forward pass with
//! central differences so gradient tests stay independent of the code path
//! they are checking.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::DestPort;
use crate::model::Weights;

/// `|a - b| / max(|a|, |b|, floor)` with a small floor so near-zero pairs
/// compare sanely.
pub fn relative_error(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-12);
    (a - b).abs() / denom
}

/// Central finite difference of `metric(logits)` with respect to one
/// coordinate of a destination port's pre-layernorm residual input.
pub fn fd_port_gradient<F>(
    weights: &Weights,
    tokens: &[u32],
    port: DestPort,
    row: usize,
    col: usize,
    eps: f64,
    metric: F,
) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> f64,
{
    let s = tokens.len();
    let d = weights.config.d_model;
    let mut delta = Array2::zeros((s, d));
    delta[[row, col]] = eps;
    let plus = metric(&weights.forward_with_port_offset(tokens, port, &delta)?);
    delta[[row, col]] = -eps;
    let minus = metric(&weights.forward_with_port_offset(tokens, port, &delta)?);
    Ok((plus - minus) / (2.0 * eps))
}

/// Central finite difference of `metric(logits)` with respect to one flat
/// coordinate of a named parameter tensor.
pub fn fd_param_gradient<F>(
    weights: &Weights,
    tokens: &[u32],
    tensor: &str,
    flat_index: usize,
    eps: f64,
    metric: F,
) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> f64,
{
    let eval = |offset: f64| -> Result<f64> {
        let mut w = weights.clone();
        let data = w
            .tensor_mut(tensor)
            .ok_or_else(|| Error::InvalidArgument(format!("no tensor named {tensor}")))?;
        if flat_index >= data.len() {
            return Err(Error::InvalidArgument(format!(
                "flat index {flat_index} out of range for {tensor} (len {})",
                data.len()
            )));
        }
        data[flat_index] += offset;
        Ok(metric(&w.forward(tokens)?))
    };
    Ok((eval(eps)? - eval(-eps)?) / (2.0 * eps))
}
