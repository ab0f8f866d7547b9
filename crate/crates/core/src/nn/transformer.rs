// SPDX-License-Identifier: Apache-2.0

//! Post-norm transformer encoder layer:
//! `y1 = LN(x + MHA(x))`, `y = LN(y1 + FFN(y1))`, with a ReLU feed-forward.

use super::linear::{linear_backward, linear_forward};
use super::tensor::{matmul_t, softmax_backward, softmax_slice};
use super::{matmul, Gradients, Initializer, ModelParameters, NnError, Tensor};

/// Small enough that normalized rows have unit variance to ~1e-12.
pub const LAYER_NORM_EPS: f64 = 1e-12;

pub struct LayerNormCache {
    normalized: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNormCache {
    /// Rows before the affine gain/bias.
    pub fn normalized(&self) -> &Tensor {
        &self.normalized
    }
}

pub fn layer_norm(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, LayerNormCache), NnError> {
    let d = x.cols();
    gain.require_shape(&[d], "layer norm gain")?;
    bias.require_shape(&[d], "layer norm bias")?;
    let mut normalized = Tensor::zeros(x.shape());
    let mut out = Tensor::zeros(x.shape());
    let mut inv_std = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        for j in 0..d {
            let n = (row[j] - mean) * inv;
            normalized.row_mut(i)[j] = n;
            out.row_mut(i)[j] = n * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Returns `dx`; accumulates `d_gain`, `d_bias` into `grads` under `prefix`.
pub fn layer_norm_backward(
    prefix: &str,
    gain: &Tensor,
    cache: &LayerNormCache,
    grad_out: &Tensor,
    grads: &mut Gradients,
) -> Tensor {
    let d = gain.len();
    let n = d as f64;
    let mut dx = Tensor::zeros(grad_out.shape());
    let mut dg = vec![0.0; d];
    let mut db = vec![0.0; d];
    for i in 0..grad_out.rows() {
        let dy = grad_out.row(i);
        let xhat = cache.normalized.row(i);
        let dxhat: Vec<f64> = dy.iter().zip(gain.data()).map(|(a, g)| a * g).collect();
        let sum: f64 = dxhat.iter().sum();
        let dot: f64 = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum();
        for j in 0..d {
            dg[j] += dy[j] * xhat[j];
            db[j] += dy[j];
            dx.row_mut(i)[j] = cache.inv_std[i] / n * (n * dxhat[j] - sum - xhat[j] * dot);
        }
    }
    grads
        .add(&format!("{prefix}.gain"), &Tensor::vector(dg))
        .expect("gain gradient shape");
    grads
        .add(&format!("{prefix}.bias"), &Tensor::vector(db))
        .expect("bias gradient shape");
    dx
}

const PROJECTIONS: [&str; 4] = ["attn.q", "attn.k", "attn.v", "attn.o"];

/// Register one encoder layer under `prefix`; feed-forward width `ff`.
pub fn init_encoder_layer(
    params: &mut ModelParameters,
    init: &mut Initializer,
    prefix: &str,
    d: usize,
    ff: usize,
) -> Result<(), NnError> {
    for proj in PROJECTIONS {
        params.insert(format!("{prefix}.{proj}.w"), init.matrix(d, d))?;
        params.insert(format!("{prefix}.{proj}.b"), Tensor::zeros(&[d]))?;
    }
    params.insert(format!("{prefix}.ff1.w"), init.matrix(ff, d))?;
    params.insert(format!("{prefix}.ff1.b"), Tensor::zeros(&[ff]))?;
    params.insert(format!("{prefix}.ff2.w"), init.matrix(d, ff))?;
    params.insert(format!("{prefix}.ff2.b"), Tensor::zeros(&[d]))?;
    for ln in ["ln1", "ln2"] {
        params.insert(format!("{prefix}.{ln}.gain"), Tensor::filled(&[d], 1.0))?;
        params.insert(format!("{prefix}.{ln}.bias"), Tensor::zeros(&[d]))?;
    }
    Ok(())
}

pub struct EncoderCache {
    x: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    probs: Vec<Tensor>,
    concat: Tensor,
    ln1: LayerNormCache,
    y1: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    ln2: LayerNormCache,
}

impl EncoderCache {
    pub fn ln1(&self) -> &LayerNormCache {
        &self.ln1
    }

    pub fn ln2(&self) -> &LayerNormCache {
        &self.ln2
    }

    /// Per-head attention probabilities, `[len, len]` each.
    pub fn attention(&self) -> &[Tensor] {
        &self.probs
    }
}

fn p<'a>(params: &'a ModelParameters, prefix: &str, name: &str) -> Result<&'a Tensor, NnError> {
    params.get(&format!("{prefix}.{name}"))
}

pub fn transformer_encoder_layer(
    params: &ModelParameters,
    prefix: &str,
    x: &Tensor,
    heads: usize,
) -> Result<Tensor, NnError> {
    Ok(encoder_forward(params, prefix, x, heads)?.0)
}

pub fn encoder_forward(
    params: &ModelParameters,
    prefix: &str,
    x: &Tensor,
    heads: usize,
) -> Result<(Tensor, EncoderCache), NnError> {
    let (len, d) = (x.rows(), x.cols());
    if x.shape().len() != 2 || len == 0 {
        return Err(NnError::ShapeMismatch(format!(
            "encoder input {:?}",
            x.shape()
        )));
    }
    if heads == 0 || d % heads != 0 {
        return Err(NnError::ShapeMismatch(format!(
            "width {d} not divisible by {heads} heads"
        )));
    }
    let proj = |name: &str, input: &Tensor| -> Result<Tensor, NnError> {
        linear_forward(
            p(params, prefix, &format!("{name}.w"))?,
            p(params, prefix, &format!("{name}.b"))?,
            input,
        )
    };
    let q = proj("attn.q", x)?;
    let k = proj("attn.k", x)?;
    let v = proj("attn.v", x)?;
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut concat = Tensor::zeros(&[len, d]);
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = (
            q.columns(h * dk, (h + 1) * dk),
            k.columns(h * dk, (h + 1) * dk),
            v.columns(h * dk, (h + 1) * dk),
        );
        let mut scores = matmul_t(&qh, &kh);
        scores.scale(scale);
        let mut a = Tensor::zeros(&[len, len]);
        for i in 0..len {
            a.row_mut(i).copy_from_slice(&softmax_slice(scores.row(i)));
        }
        concat.add_columns(h * dk, &matmul(&a, &vh)?);
        probs.push(a);
    }
    let mut s1 = proj("attn.o", &concat)?;
    s1.add_assign(x)?;
    let (y1, ln1) = layer_norm(
        &s1,
        p(params, prefix, "ln1.gain")?,
        p(params, prefix, "ln1.bias")?,
    )?;

    let hidden_pre = proj("ff1", &y1)?;
    let mut hidden = hidden_pre.clone();
    hidden.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    let mut s2 = proj("ff2", &hidden)?;
    s2.add_assign(&y1)?;
    let (y2, ln2) = layer_norm(
        &s2,
        p(params, prefix, "ln2.gain")?,
        p(params, prefix, "ln2.bias")?,
    )?;
    Ok((
        y2,
        EncoderCache {
            x: x.clone(),
            q,
            k,
            v,
            probs,
            concat,
            ln1,
            y1,
            hidden_pre,
            hidden,
            ln2,
        },
    ))
}

/// Backward through one encoder layer; returns `dx`.
pub fn encoder_backward(
    params: &ModelParameters,
    prefix: &str,
    cache: &EncoderCache,
    grad_out: &Tensor,
    grads: &mut Gradients,
) -> Result<Tensor, NnError> {
    let heads = cache.probs.len();
    let d = cache.x.cols();
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut proj_back = |name: &str, input: &Tensor, dy: &Tensor| -> Result<Tensor, NnError> {
        let w = p(params, prefix, &format!("{name}.w"))?;
        let (gw, gb, gx) = linear_backward(w, input, dy)?;
        grads.add(&format!("{prefix}.{name}.w"), &gw)?;
        grads.add(&format!("{prefix}.{name}.b"), &gb)?;
        Ok(gx)
    };

    // layer-norm grads go to a side buffer while `proj_back` holds `grads`
    let mut ln_grads = Gradients::new();

    // feed-forward block
    let ds2 = layer_norm_backward(
        &format!("{prefix}.ln2"),
        p(params, prefix, "ln2.gain")?,
        &cache.ln2,
        grad_out,
        &mut ln_grads,
    );
    let mut dhidden = proj_back("ff2", &cache.hidden, &ds2)?;
    for (g, pre) in dhidden.data_mut().iter_mut().zip(cache.hidden_pre.data()) {
        if *pre <= 0.0 {
            *g = 0.0;
        }
    }
    let mut dy1 = proj_back("ff1", &cache.y1, &dhidden)?;
    dy1.add_assign(&ds2)?;

    // attention block
    let ds1 = layer_norm_backward(
        &format!("{prefix}.ln1"),
        p(params, prefix, "ln1.gain")?,
        &cache.ln1,
        &dy1,
        &mut ln_grads,
    );
    let dconcat = proj_back("attn.o", &cache.concat, &ds1)?;
    let len = cache.x.rows();
    let mut dq = Tensor::zeros(&[len, d]);
    let mut dkey = Tensor::zeros(&[len, d]);
    let mut dv = Tensor::zeros(&[len, d]);
    for (h, a) in cache.probs.iter().enumerate() {
        let cols = (h * dk, (h + 1) * dk);
        let (qh, kh, vh) = (
            cache.q.columns(cols.0, cols.1),
            cache.k.columns(cols.0, cols.1),
            cache.v.columns(cols.0, cols.1),
        );
        let d_oh = dconcat.columns(cols.0, cols.1);
        // O = A V
        let da = matmul_t(&d_oh, &vh);
        dv.add_columns(cols.0, &matmul(&a.transpose(), &d_oh)?);
        let mut ds = Tensor::zeros(&[len, len]);
        for i in 0..len {
            ds.row_mut(i)
                .copy_from_slice(&softmax_backward(a.row(i), da.row(i)));
        }
        ds.scale(scale);
        dq.add_columns(cols.0, &matmul(&ds, &kh)?);
        dkey.add_columns(cols.0, &matmul(&ds.transpose(), &qh)?);
    }
    let mut dx = ds1;
    dx.add_assign(&proj_back("attn.q", &cache.x, &dq)?)?;
    dx.add_assign(&proj_back("attn.k", &cache.x, &dkey)?)?;
    dx.add_assign(&proj_back("attn.v", &cache.x, &dv)?)?;
    grads.merge(ln_grads)?;
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{cross_entropy, grad_check, softmax};

    fn layer(d: usize, seed: u64) -> ModelParameters {
        let mut params = ModelParameters::new(seed);
        let mut init = Initializer::new(seed);
        init_encoder_layer(&mut params, &mut init, "enc", d, 2 * d).unwrap();
        // perturb biases and layer-norm affine so every gradient is non-trivial
        for name in params.names().map(String::from).collect::<Vec<_>>() {
            if name.ends_with(".b") || name.ends_with(".bias") || name.ends_with(".gain") {
                let t = params.get_mut(&name).unwrap();
                let noise = init.glorot(t.shape(), 8, 8);
                t.add_assign(&noise).unwrap();
            }
        }
        params
    }

    #[test]
    fn shape_contract() {
        let params = layer(8, 1);
        for len in [1, 3, 7] {
            let x = Initializer::new(len as u64).matrix(len, 8);
            let y = transformer_encoder_layer(&params, "enc", &x, 2).unwrap();
            assert_eq!(y.shape(), [len, 8]);
            assert!(y.is_finite());
        }
        let x = Initializer::new(2).matrix(3, 8);
        assert!(transformer_encoder_layer(&params, "enc", &x, 3).is_err());
    }

    #[test]
    fn layer_norm_statistics() {
        let params = layer(8, 2);
        let x = Initializer::new(3).matrix(5, 8);
        let (_, cache) = encoder_forward(&params, "enc", &x, 2).unwrap();
        for ln in [cache.ln1(), cache.ln2()] {
            for i in 0..5 {
                let row = ln.normalized().row(i);
                let mean = row.iter().sum::<f64>() / 8.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
                assert!(mean.abs() < 1e-9);
                assert!((var - 1.0).abs() < 1e-9);
            }
        }
        for a in cache.attention() {
            for i in 0..5 {
                assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_check_with_cross_entropy() {
        let mut params = layer(8, 4);
        let mut init = Initializer::new(5);
        params.insert("x", init.matrix(5, 8)).unwrap();
        let readout = init.matrix(8, 3);
        let loss = |params: &ModelParameters| {
            let x = params.get("x").unwrap();
            let (y, cache) = encoder_forward(params, "enc", x, 2).unwrap();
            // logits = y[0] · readout; loss = CE(softmax(logits), 1)
            let logits = matmul(
                &Tensor::new(vec![1, 8], y.row(0).to_vec()).unwrap(),
                &readout,
            )
            .unwrap();
            let probs = softmax(&Tensor::vector(logits.data().to_vec()));
            let value = cross_entropy(&probs, 1).unwrap();
            let mut dlogits = probs.data().to_vec();
            dlogits[1] -= 1.0;
            let mut dy = Tensor::zeros(&[5, 8]);
            for j in 0..8 {
                dy.row_mut(0)[j] = (0..3).map(|c| dlogits[c] * readout.get2(j, c)).sum();
            }
            let mut g = Gradients::new();
            let dx = encoder_backward(params, "enc", &cache, &dy, &mut g).unwrap();
            g.insert("x", dx);
            (value, g)
        };
        let err = grad_check(loss, &params, 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }
}
