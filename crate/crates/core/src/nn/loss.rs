// SPDX-License-Identifier: Apache-2.0

use super::tensor::dot;
use super::{NnError, Tensor};

/// Lower clamp on probabilities fed to the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `−ln p[gold]`, with `p[gold]` clamped at [`PROB_FLOOR`].
pub fn cross_entropy(probabilities: &Tensor, gold: usize) -> Result<f64, NnError> {
    let p = probabilities
        .data()
        .get(gold)
        .ok_or(NnError::IndexOutOfRange {
            index: gold,
            bound: probabilities.len(),
        })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradient of `cross_entropy(softmax(logits), gold)` w.r.t. the logits.
pub fn softmax_cross_entropy_grad(probabilities: &[f64], gold: usize) -> Vec<f64> {
    let mut g = probabilities.to_vec();
    g[gold] -= 1.0;
    g
}

const NORM_FLOOR: f64 = 1e-12;

/// Cosine similarity; zero when either vector is (numerically) zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// `(d cos/d a, d cos/d b)`.
pub fn cosine_backward(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return (vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let c = dot(a, b) / (na * nb);
    let da = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / (na * na))
        .collect();
    let db = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - c * y / (nb * nb))
        .collect();
    (da, db)
}
