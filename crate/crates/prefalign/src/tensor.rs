//! Flat f64 tensors.
//!
//! The only tensor shapes this crate needs are vectors and the occasional
//! logical reshape, so `Tensor` is a flat buffer plus a shape for invariant
//! checks. All math stays in f64; 32-bit appears only at file boundaries.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub data: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::new",
                expected: format!("{expected} elements for shape {shape:?}"),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Tensor { data, shape })
    }

    pub fn vector(data: Vec<f64>) -> Self {
        let n = data.len();
        Tensor { data, shape: vec![n] }
    }

    pub fn zeros(n: usize) -> Self {
        Tensor::vector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { context, step: None })
        }
    }
}

/// Mean squared difference between two equal-length slices.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n
}
