// SPDX-License-Identifier: Apache-2.0

use super::tensor::{axpy, dot, softmax_backward, softmax_slice};
use super::{NnError, Tensor};

/// Scaled dot-product attention of one query over a sequence.
/// `weights = softmax(keys · query / sqrt(d))`, `context = weightsᵀ · values`.
pub fn attention(
    query: &[f64],
    keys: &Tensor,
    values: &Tensor,
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let len = keys.rows();
    if keys.is_empty() || len == 0 {
        return Err(NnError::EmptySequence);
    }
    if keys.cols() != query.len() || values.rows() != len {
        return Err(NnError::ShapeMismatch(format!(
            "attention q[{}] keys{:?} values{:?}",
            query.len(),
            keys.shape(),
            values.shape()
        )));
    }
    let scale = 1.0 / (query.len() as f64).sqrt();
    let scores: Vec<f64> = (0..len).map(|i| dot(keys.row(i), query) * scale).collect();
    let weights = softmax_slice(&scores);
    let mut context = vec![0.0; values.cols()];
    for (i, w) in weights.iter().enumerate() {
        axpy(&mut context, *w, values.row(i));
    }
    Ok((context, weights))
}

/// `(d_query, d_keys, d_values)` for [`attention`], given its `weights`.
pub fn attention_backward(
    query: &[f64],
    keys: &Tensor,
    values: &Tensor,
    weights: &[f64],
    d_context: &[f64],
) -> (Vec<f64>, Tensor, Tensor) {
    let len = keys.rows();
    let scale = 1.0 / (query.len() as f64).sqrt();
    let mut d_values = Tensor::zeros(values.shape());
    let d_weights: Vec<f64> = (0..len).map(|i| dot(values.row(i), d_context)).collect();
    for (i, w) in weights.iter().enumerate() {
        axpy(d_values.row_mut(i), *w, d_context);
    }
    let d_scores = softmax_backward(weights, &d_weights);
    let mut d_query = vec![0.0; query.len()];
    let mut d_keys = Tensor::zeros(keys.shape());
    for (i, ds) in d_scores.iter().enumerate() {
        axpy(&mut d_query, ds * scale, keys.row(i));
        axpy(d_keys.row_mut(i), ds * scale, query);
    }
    (d_query, d_keys, d_values)
}

/// Attention pooling with a learned query, keys = values = `features`.
pub fn attention_pool(query: &[f64], features: &Tensor) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    attention(query, features, features)
}

/// `(d_query, d_features)` for [`attention_pool`].
pub fn attention_pool_backward(
    query: &[f64],
    features: &Tensor,
    weights: &[f64],
    d_pooled: &[f64],
) -> Result<(Vec<f64>, Tensor), NnError> {
    let (dq, mut dk, dv) = attention_backward(query, features, features, weights, d_pooled);
    dk.add_assign(&dv)?;
    Ok((dq, dk))
}
