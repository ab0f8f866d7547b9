// SPDX-License-Identifier: Apache-2.0

use super::tensor::{axpy, matmul_t};
use super::{matmul, NnError, Tensor};

/// `y = x Wᵀ + b` for `W: [out, in]`, `b: [out]`, `x: [batch, in]`.
pub fn linear_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor, NnError> {
    let (out, inp) = (w.rows(), w.cols());
    if w.shape().len() != 2 || b.shape() != [out] || x.cols() != inp {
        return Err(NnError::ShapeMismatch(format!(
            "linear W{:?} b{:?} x{:?}",
            w.shape(),
            b.shape(),
            x.shape()
        )));
    }
    let x2 = as_matrix(x);
    let mut y = matmul_t(&x2, w);
    for i in 0..y.rows() {
        axpy(y.row_mut(i), 1.0, b.data());
    }
    Ok(y)
}

/// Gradients of [`linear_forward`]: `(dW, db, dx)`.
pub fn linear_backward(
    w: &Tensor,
    x: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor), NnError> {
    let x2 = as_matrix(x);
    let g2 = as_matrix(grad_out);
    if g2.rows() != x2.rows() || g2.cols() != w.rows() || x2.cols() != w.cols() {
        return Err(NnError::ShapeMismatch(format!(
            "linear backward W{:?} x{:?} dy{:?}",
            w.shape(),
            x.shape(),
            grad_out.shape()
        )));
    }
    let grad_w = matmul(&g2.transpose(), &x2)?;
    let mut grad_b = Tensor::zeros(&[w.rows()]);
    for i in 0..g2.rows() {
        axpy(grad_b.data_mut(), 1.0, g2.row(i));
    }
    let mut grad_x = matmul(&g2, w)?;
    if x.shape().len() == 1 {
        grad_x = Tensor::vector(grad_x.into_data());
    }
    Ok((grad_w, grad_b, grad_x))
}

fn as_matrix(t: &Tensor) -> Tensor {
    if t.shape().len() == 1 {
        Tensor::new(vec![1, t.len()], t.data().to_vec()).expect("vector reshapes to a row")
    } else {
        t.clone()
    }
}

/// Gather rows of `table: [vocab, d]`.
pub fn embedding_lookup(table: &Tensor, ids: &[usize]) -> Result<Tensor, NnError> {
    let vocab = table.rows();
    let mut data = Vec::with_capacity(ids.len() * table.cols());
    for &id in ids {
        if id >= vocab {
            return Err(NnError::IndexOutOfRange {
                index: id,
                bound: vocab,
            });
        }
        data.extend_from_slice(table.row(id));
    }
    Tensor::new(vec![ids.len(), table.cols()], data)
}

/// Scatter-add `grad_out: [len, d]` back into a `[vocab, d]` gradient.
pub fn embedding_backward(
    table_shape: &[usize],
    ids: &[usize],
    grad_out: &Tensor,
    grad_table: &mut Tensor,
) -> Result<(), NnError> {
    grad_table.require_shape(table_shape, "embedding gradient")?;
    if grad_out.rows() != ids.len() || grad_out.cols() != table_shape[1] {
        return Err(NnError::ShapeMismatch(format!(
            "embedding backward: {} ids vs grad {:?}",
            ids.len(),
            grad_out.shape()
        )));
    }
    for (row, &id) in ids.iter().enumerate() {
        if id >= table_shape[0] {
            return Err(NnError::IndexOutOfRange {
                index: id,
                bound: table_shape[0],
            });
        }
        axpy(grad_table.row_mut(id), 1.0, grad_out.row(row));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{grad_check, Gradients, Initializer, ModelParameters};

    #[test]
    fn identity_and_bias() {
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 4.0]]).unwrap();
        let y = linear_forward(&Tensor::identity(3), &Tensor::zeros(&[3]), &x).unwrap();
        assert_eq!(y, x);
        let b = Tensor::vector(vec![1.0, 2.0]);
        let y = linear_forward(&Tensor::zeros(&[2, 3]), &b, &Tensor::zeros(&[4, 3])).unwrap();
        for i in 0..4 {
            assert_eq!(y.row(i), [1.0, 2.0]);
        }
        assert!(linear_forward(&Tensor::zeros(&[2, 3]), &b, &Tensor::zeros(&[1, 2])).is_err());
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let mut init = Initializer::new(3);
        let mut p = ModelParameters::new(3);
        p.insert("w", init.matrix(3, 4)).unwrap();
        p.insert("b", init.glorot(&[3], 4, 3)).unwrap();
        p.insert("x", init.matrix(2, 4)).unwrap();
        let target = init.matrix(2, 3);
        let loss = |p: &ModelParameters| {
            let (w, b, x) = (
                p.get("w").unwrap(),
                p.get("b").unwrap(),
                p.get("x").unwrap(),
            );
            let y = linear_forward(w, b, x).unwrap();
            let diff: Vec<f64> = y
                .data()
                .iter()
                .zip(target.data())
                .map(|(a, t)| a - t)
                .collect();
            let value = 0.5 * diff.iter().map(|d| d * d).sum::<f64>();
            let dy = Tensor::new(y.shape().to_vec(), diff).unwrap();
            let (gw, gb, gx) = linear_backward(w, x, &dy).unwrap();
            let mut g = Gradients::new();
            g.insert("w", gw);
            g.insert("b", gb);
            g.insert("x", gx);
            (value, g)
        };
        assert!(grad_check(loss, &p, 1e-5) < 1e-6);
    }

    #[test]
    fn embedding_gather_and_scatter() {
        let table = Initializer::new(9).matrix(4, 3);
        assert_eq!(embedding_lookup(&table, &[0]).unwrap().data(), table.row(0));
        let out = embedding_lookup(&table, &[2, 0]).unwrap();
        assert_eq!(out.row(0), table.row(2));
        assert_eq!(out.row(1), table.row(0));
        assert!(matches!(
            embedding_lookup(&table, &[4]),
            Err(NnError::IndexOutOfRange { index: 4, bound: 4 })
        ));

        let mut g = Tensor::zeros(&[4, 3]);
        let ones = Tensor::filled(&[2, 3], 1.0);
        embedding_backward(&[4, 3], &[1, 1], &ones, &mut g).unwrap();
        assert_eq!(g.row(1), [2.0, 2.0, 2.0]);
        assert_eq!(g.row(0), [0.0, 0.0, 0.0]);
    }
}
