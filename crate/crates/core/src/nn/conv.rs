// SPDX-License-Identifier: Apache-2.0

use super::{NnError, Tensor};

fn check(filters: &Tensor, x: &Tensor) -> Result<(usize, usize, usize), NnError> {
    let [c_out, width, d] = filters.shape() else {
        return Err(NnError::ShapeMismatch(format!(
            "conv filters must be [c_out, width, d], got {:?}",
            filters.shape()
        )));
    };
    if width % 2 == 0 {
        return Err(NnError::EvenWidth(*width));
    }
    if x.shape().len() != 2 || x.cols() != *d {
        return Err(NnError::ShapeMismatch(format!(
            "conv input {:?} vs filter depth {d}",
            x.shape()
        )));
    }
    Ok((*c_out, *width, *d))
}

/// Same-padded 1-D cross-correlation over the sequence axis.
/// `filters: [c_out, width, d]`, `x: [len, d]` → `[len, c_out]`.
pub fn conv1d_forward(filters: &Tensor, x: &Tensor) -> Result<Tensor, NnError> {
    let (c_out, width, d) = check(filters, x)?;
    let len = x.rows();
    let half = width / 2;
    let f = filters.data();
    let mut out = Tensor::zeros(&[len, c_out]);
    for t in 0..len {
        let row = out.row_mut(t);
        for k in 0..width {
            let Some(src) = (t + k).checked_sub(half).filter(|&s| s < len) else {
                continue;
            };
            let xs = x.row(src);
            for (c, o) in row.iter_mut().enumerate() {
                let fk = &f[(c * width + k) * d..(c * width + k + 1) * d];
                *o += fk.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    Ok(out)
}

/// `(d_filters, d_x)` for [`conv1d_forward`].
pub fn conv1d_backward(
    filters: &Tensor,
    x: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor), NnError> {
    let (c_out, width, d) = check(filters, x)?;
    let len = x.rows();
    grad_out.require_shape(&[len, c_out], "conv grad")?;
    let half = width / 2;
    let f = filters.data();
    let mut gf = Tensor::zeros(filters.shape());
    let mut gx = Tensor::zeros(x.shape());
    for t in 0..len {
        for k in 0..width {
            let Some(src) = (t + k).checked_sub(half).filter(|&s| s < len) else {
                continue;
            };
            for c in 0..c_out {
                let g = grad_out.get2(t, c);
                if g == 0.0 {
                    continue;
                }
                let base = (c * width + k) * d;
                let xs = x.row(src);
                for j in 0..d {
                    gf.data_mut()[base + j] += g * xs[j];
                }
                let gxs = gx.row_mut(src);
                for j in 0..d {
                    gxs[j] += g * f[base + j];
                }
            }
        }
    }
    Ok((gf, gx))
}
