//! Dense row-major f64 tensors. Rank 0 (scalar), 1 (vector), and 2 (matrix)
//! are the only ranks the engine needs; shape arithmetic stays explicit and
//! there is no broadcasting here.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(Error::shape(
                "tensor_new",
                format!("shape {:?} wants {} values, got {}", shape, want, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
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

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_empty()
    }

    /// Scalar value. Errors on any other rank.
    pub fn item(&self) -> Result<f64> {
        if self.is_scalar() {
            Ok(self.data[0])
        } else {
            Err(Error::shape(
                "tensor_item",
                format!("expected scalar, got shape {:?}", self.shape),
            ))
        }
    }

    /// Rows of a matrix, or length of a vector treated as a single column.
    pub fn rows(&self) -> Result<usize> {
        match self.shape.as_slice() {
            [r, _] => Ok(*r),
            other => Err(Error::shape(
                "tensor_rows",
                format!("expected matrix, got shape {:?}", other),
            )),
        }
    }

    pub fn cols(&self) -> Result<usize> {
        match self.shape.as_slice() {
            [_, c] => Ok(*c),
            other => Err(Error::shape(
                "tensor_cols",
                format!("expected matrix, got shape {:?}", other),
            )),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn scalar_roundtrip() {
        let t = Tensor::scalar(4.25);
        assert!(t.is_scalar());
        assert_eq!(t.item().unwrap(), 4.25);
        assert!(Tensor::vector(vec![1.0]).item().is_err());
    }

    #[test]
    fn matrix_dims() {
        let m = Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        assert_eq!(m.rows().unwrap(), 2);
        assert_eq!(m.cols().unwrap(), 3);
        assert_eq!(m.data()[4], 5.0);
    }
}
