//! Dense row-major f64 tensors. Just enough arithmetic for the model;
//! no broadcasting, no views.

use serde::{Deserialize, Serialize};

use crate::error::DiffError;

/// Dense tensor: shape plus row-major 64-bit float storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, DiffError> {
        let expect: usize = shape.iter().product();
        if shape.contains(&0) || expect != data.len() {
            return Err(DiffError::ShapeData {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn vector(v: Vec<f64>) -> Self {
        Tensor {
            shape: vec![v.len()],
            data: v,
        }
    }

    /// Row-major matrix from `rows` slices of equal length.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, DiffError> {
        Tensor::new(vec![rows, cols], data)
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Scalar tensors are the only ones a loss may produce.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    /// Matrix extents as (rows, cols). 1-D vectors count as column vectors.
    pub fn mat_dims(&self) -> Option<(usize, usize)> {
        match self.shape.len() {
            1 => Some((self.shape[0], 1)),
            2 => Some((self.shape[0], self.shape[1])),
            _ => None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// a * b for 2-D (or vector) operands; result shape [m, n] or [m] when b is a vector.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    let (m, ka) = a.mat_dims().ok_or_else(|| DiffError::Rank {
        op: "matmul",
        shape: a.shape.clone(),
    })?;
    let (kb, n) = b.mat_dims().ok_or_else(|| DiffError::Rank {
        op: "matmul",
        shape: b.shape.clone(),
    })?;
    if ka != kb {
        return Err(DiffError::DimMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for k in 0..ka {
            let av = a.data[i * ka + k];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    let shape = if b.shape.len() == 1 && n == 1 {
        vec![m]
    } else {
        vec![m, n]
    };
    Tensor::new(shape, out)
}

/// a^T * b, used by matmul's backward without materializing transposes.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    let (ka, m) = a.mat_dims().ok_or_else(|| DiffError::Rank {
        op: "matmul",
        shape: a.shape.clone(),
    })?;
    let (kb, n) = b.mat_dims().ok_or_else(|| DiffError::Rank {
        op: "matmul",
        shape: b.shape.clone(),
    })?;
    if ka != kb {
        return Err(DiffError::DimMismatch {
            op: "matmul_tn",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for k in 0..ka {
        for i in 0..m {
            let av = a.data[k * m + i];
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// a * b^T, the other half of matmul's backward.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, DiffError> {
    let (m, ka) = a.mat_dims().ok_or_else(|| DiffError::Rank {
        op: "matmul",
        shape: a.shape.clone(),
    })?;
    let (n, kb) = b.mat_dims().ok_or_else(|| DiffError::Rank {
        op: "matmul",
        shape: b.shape.clone(),
    })?;
    if ka != kb {
        return Err(DiffError::DimMismatch {
            op: "matmul_nt",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        for j in 0..n {
            let brow = &b.data[j * kb..(j + 1) * kb];
            let mut acc = 0.0;
            for k in 0..ka {
                acc += arow[k] * brow[k];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Exact-erf GELU: x * Phi(x).
pub fn gelu_scalar(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    normal_cdf(x) + x * normal_pdf(x)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(x / std::f64::consts::SQRT_2))
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_identity() {
        let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::matrix(2, 2, vec![3.0, -1.5, 2.25, 0.5]).unwrap();
        let c = matmul(&eye, &m).unwrap();
        assert_eq!(c.data(), m.data());
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
        let b = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn transposed_products_agree_with_dense() {
        let a = Tensor::matrix(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::matrix(3, 4, (0..12).map(|i| i as f64 * 0.5 - 2.0).collect()).unwrap();
        let tn = matmul_tn(&a, &b).unwrap();
        // reference: transpose a by hand
        let at = Tensor::matrix(2, 3, vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]).unwrap();
        let dense = matmul(&at, &b).unwrap();
        assert_eq!(tn.data(), dense.data());

        let c = Tensor::matrix(2, 4, (0..8).map(|i| i as f64 - 3.0).collect()).unwrap();
        let nt = matmul_nt(&b, &c).unwrap();
        let ct = Tensor::matrix(4, 2, vec![-3.0, 1.0, -2.0, 2.0, -1.0, 3.0, 0.0, 4.0]).unwrap();
        let dense2 = matmul(&b, &ct).unwrap();
        assert_eq!(nt.shape(), &[3, 2]);
        assert_eq!(nt.data(), dense2.data());
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((sigmoid_scalar(15.0) - 0.999999694).abs() < 1e-9);
        for x in [1.0, 5.0, 20.0] {
            let sym = sigmoid_scalar(-x) - (1.0 - sigmoid_scalar(x));
            assert!(sym.abs() < 1e-15, "symmetry violated at {x}: {sym}");
        }
    }

    #[test]
    fn gelu_values() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(3.0) - 3.0).abs() < 0.01);
        // tail behaves like identity
        assert!((gelu_scalar(8.0) - 8.0).abs() < 1e-12);
    }
}
