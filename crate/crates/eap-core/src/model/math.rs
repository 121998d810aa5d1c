//! Elementwise and per-row primitives shared by the forward and backward
//! passes.

use ndarray::{Array1, Array2, ArrayView2};

/// Parameter-free layernorm applied per row: `(x - mean) / sqrt(var + eps)`.
/// Returns the normalized rows and each row's `1/sqrt(var + eps)`.
pub(crate) fn layer_norm(x: &ArrayView2<f64>, eps: f64) -> (Array2<f64>, Array1<f64>) {
    let (s, d) = x.dim();
    let mut y = Array2::zeros((s, d));
    let mut inv_std = Array1::zeros(s);
    for i in 0..s {
        let row = x.row(i);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let r = 1.0 / (var + eps).sqrt();
        inv_std[i] = r;
        for (out, &v) in y.row_mut(i).iter_mut().zip(row.iter()) {
            *out = (v - mean) * r;
        }
    }
    (y, inv_std)
}

/// Backward through parameter-free layernorm:
/// `dx = r * (dy - mean(dy) - y * mean(dy . y))` per row.
pub(crate) fn layer_norm_backward(
    dy: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
    inv_std: &Array1<f64>,
) -> Array2<f64> {
    let (s, d) = dy.dim();
    let mut dx = Array2::zeros((s, d));
    for i in 0..s {
        let dy_row = dy.row(i);
        let y_row = y.row(i);
        let m1 = dy_row.sum() / d as f64;
        let m2 = dy_row.iter().zip(y_row.iter()).map(|(&a, &b)| a * b).sum::<f64>() / d as f64;
        let r = inv_std[i];
        for ((out, &g), &yv) in dx.row_mut(i).iter_mut().zip(dy_row.iter()).zip(y_row.iter()) {
            *out = r * (g - m1 - yv * m2);
        }
    }
    dx
}

const GELU_BETA: f64 = 0.044715;

fn sqrt_2_over_pi() -> f64 {
    (2.0 / std::f64::consts::PI).sqrt()
}

/// GPT-2's tanh-approximation GELU.
pub(crate) fn gelu(x: f64) -> f64 {
    let u = sqrt_2_over_pi() * (x + GELU_BETA * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

pub(crate) fn gelu_prime(x: f64) -> f64 {
    let a = sqrt_2_over_pi();
    let u = a * (x + GELU_BETA * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * a * (1.0 + 3.0 * GELU_BETA * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = arr2(&[[1.0, 2.0, 3.0, 10.0], [-5.0, 0.0, 5.0, 0.0]]);
        let (y, _) = layer_norm(&x.view(), 1e-12);
        for row in y.rows() {
            let mean: f64 = row.sum() / row.len() as f64;
            let var: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>()
                / row.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gelu_prime_matches_finite_differences() {
        let eps = 1e-6;
        for &x in &[-3.0, -1.0, -0.1, 0.0, 0.2, 1.5, 4.0] {
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            assert!(
                (fd - gelu_prime(x)).abs() < 1e-8,
                "x={x}: fd={fd} analytic={}",
                gelu_prime(x)
            );
        }
    }
}
