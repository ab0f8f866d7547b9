// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::NnError;

/// Dense row-major `f64` array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// Stack equal-length rows into a matrix.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, NnError> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(NnError::ShapeMismatch("ragged rows".into()));
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a matrix (or 1 for a vector).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn require_shape(&self, shape: &[usize], what: &str) -> Result<(), NnError> {
        if self.shape != shape {
            return Err(NnError::ShapeMismatch(format!(
                "{what}: expected {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Tensor {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor {
            shape: vec![c, r],
            data: out,
        }
    }

    /// `self += other` elementwise.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), NnError> {
        if self.shape != other.shape {
            return Err(NnError::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        for v in &mut self.data {
            *v *= k;
        }
    }

    /// Copy of the column range `[start, end)` of a matrix.
    pub fn columns(&self, start: usize, end: usize) -> Tensor {
        let r = self.rows();
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Tensor {
            shape: vec![r, end - start],
            data,
        }
    }

    /// Add `block` into the column range starting at `start`.
    pub fn add_columns(&mut self, start: usize, block: &Tensor) {
        let w = block.cols();
        for i in 0..self.rows() {
            let dst = &mut self.row_mut(i)[start..start + w];
            for (d, s) in dst.iter_mut().zip(block.row(i)) {
                *d += s;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub(crate) fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x` for `W: [rows, cols]`.
pub(crate) fn matvec(w: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows()).map(|i| dot(w.row(i), x)).collect()
}

/// `out += Wᵀ g` for `W: [rows, cols]`, `g: [rows]`.
pub(crate) fn matvec_t_acc(w: &Tensor, g: &[f64], out: &mut [f64]) {
    for (i, gi) in g.iter().enumerate() {
        if *gi != 0.0 {
            axpy(out, *gi, w.row(i));
        }
    }
}

/// `G += g ⊗ x` for `G: [rows, cols]`.
pub(crate) fn outer_acc(grad: &mut Tensor, g: &[f64], x: &[f64]) {
    for (i, gi) in g.iter().enumerate() {
        if *gi != 0.0 {
            axpy(grad.row_mut(i), *gi, x);
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard matrix product of `[m, k]` and `[k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NnError> {
    if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
        return Err(NnError::ShapeMismatch(format!(
            "matmul {:?} x {:?}",
            a.shape, b.shape
        )));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let dst = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip != 0.0 {
                axpy(dst, aip, &b.data[p * n..(p + 1) * n]);
            }
        }
    }
    Ok(Tensor {
        shape: vec![m, n],
        data: out,
    })
}

/// `a · bᵀ` without materializing the transpose.
pub(crate) fn matmul_t(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (a.rows(), b.rows());
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        for j in 0..n {
            out.push(dot(a.row(i), b.row(j)));
        }
    }
    Tensor {
        shape: vec![m, n],
        data: out,
    }
}

pub(crate) fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Backward of softmax: `dx = p ⊙ (dp − Σ p·dp)`.
pub(crate) fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let inner = dot(p, dp);
    p.iter().zip(dp).map(|(pi, gi)| pi * (gi - inner)).collect()
}

/// Softmax along the last axis, with max subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    if x.cols() == 0 {
        return out;
    }
    for i in 0..x.len() / x.cols() {
        let row = softmax_slice(x.row(i));
        out.row_mut(i).copy_from_slice(&row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&a, &Tensor::identity(2)).unwrap(), a);
        let ones = m(&[&[1.0], &[1.0]]);
        assert_eq!(matmul(&a, &ones).unwrap(), m(&[&[3.0], &[7.0]]));
        let bad = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[4, 2]));
        assert!(matches!(bad, Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn matmul_t_agrees() {
        let a = m(&[&[1.0, 2.0, 0.5], &[3.0, -4.0, 1.0]]);
        let b = m(&[&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]]);
        assert_eq!(matmul_t(&a, &b), matmul(&a, &b.transpose()).unwrap());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&Tensor::vector(vec![0.0, 0.0])).data(), [0.5, 0.5]);
        let p = softmax(&Tensor::vector(vec![1f64.ln(), 3f64.ln()]));
        assert_abs_diff_eq!(p.data()[0], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p.data()[1], 0.75, epsilon = 1e-15);

        let x = m(&[&[1.0, -2.0, 0.3], &[700.0, 701.0, 699.0]]);
        let p = softmax(&x);
        for i in 0..2 {
            assert_abs_diff_eq!(p.row(i).iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(p.row(i).iter().all(|&v| v > 0.0));
        }
        let mut shifted = x.clone();
        shifted.data_mut().iter_mut().for_each(|v| *v += 12.5);
        let q = softmax(&shifted);
        for (a, b) in p.data().iter().zip(q.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_checks() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
