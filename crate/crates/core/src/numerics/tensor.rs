//! Dense row-major tensors with shape metadata.
//!
//! Tensors are immutable once produced by an op; the tape in
//! [`crate::numerics::tape`] builds all differentiable computations on top
//! of them.

use crate::error::{Error, Result};

/// Storage precision. `Single` rounds every op result through f32 so a
/// training run can emulate 32-bit arithmetic while tests keep f64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Precision {
    Double,
    Single,
}

impl Precision {
    pub fn combine(self, other: Precision) -> Precision {
        if self == Precision::Single || other == Precision::Single {
            Precision::Single
        } else {
            Precision::Double
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    prec: Precision,
}

impl Tensor {
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor { shape, data, prec: Precision::Double }
    }

    pub fn zeros(shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![0.0; n], prec: Precision::Double }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Tensor {
        let n = shape.iter().product();
        Tensor { shape, data: vec![value; n], prec: Precision::Double }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor::from_vec(vec![1], vec![value])
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor::from_vec(vec![data.len()], data)
    }

    /// Row-major matrix from nested rows; all rows must have equal length.
    pub fn matrix(rows: &[Vec<f64>]) -> Tensor {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix rows");
            data.extend_from_slice(row);
        }
        Tensor::from_vec(vec![r, c], data)
    }

    pub fn with_precision(mut self, prec: Precision) -> Tensor {
        self.prec = prec;
        if prec == Precision::Single {
            for v in &mut self.data {
                *v = *v as f32 as f64;
            }
        }
        self
    }

    pub fn precision(&self) -> Precision {
        self.prec
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len());
        let mut flat = 0;
        for (d, &i) in idx.iter().enumerate() {
            assert!(i < self.shape[d], "index {:?} out of bounds for {:?}", idx, self.shape);
            flat = flat * self.shape[d] + i;
        }
        flat
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Reinterprets the data with a new shape of identical element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), self.numel());
        Tensor { shape, data: self.data.clone(), prec: self.prec }
    }
}

/// Elementwise max absolute difference; shapes must match.
pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
