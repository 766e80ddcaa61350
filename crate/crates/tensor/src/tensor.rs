//! Dense row-major tensor value type.

use crate::dtype::Element;
use crate::error::{Result, TensorError};

/// Dense N-dimensional value. Row-major, contiguous, no strides.
///
/// Gradients are not stored here; they live on the [`crate::Tape`] and are
/// returned by `backward` as plain tensors of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Vec<usize>, data: Vec<E>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::InvalidShape {
                op: "Tensor::new",
                shape,
                reason: format!("data length {} != product of dims", data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![E::zero(); numel],
        }
    }

    pub fn full(shape: Vec<usize>, value: E) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn ones(shape: Vec<usize>) -> Self {
        Self::full(shape, E::one())
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: E) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<E>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<E>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(TensorError::InvalidShape {
                op: "Tensor::from_rows",
                shape: vec![rows.len(), cols],
                reason: "ragged rows".into(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Tensor {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn from_f64_slice(shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        Self::new(shape, values.iter().map(|&v| E::from_f64(v)).collect())
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

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<E> {
        self.data
    }

    /// Value of a rank-0 or single-element tensor.
    pub fn item(&self) -> Result<E> {
        if self.data.len() != 1 {
            return Err(TensorError::InvalidShape {
                op: "Tensor::item",
                shape: self.shape.clone(),
                reason: "expected exactly one element".into(),
            });
        }
        Ok(self.data[0])
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|&v| Element::to_f64(v)).collect()
    }

    /// Reinterpret with a new shape of equal element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::InvalidShape {
                op: "Tensor::reshaped",
                shape,
                reason: format!("element count {} does not match", self.data.len()),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn validate_finite(&self, context: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op: context })
        }
    }
}

/// Row-major strides for a shape.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_length_mismatch() {
        let err = Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::InvalidShape { .. }));
    }

    #[test]
    fn scalar_has_rank_zero() {
        let t = Tensor::<f64>::scalar(2.5);
        assert_eq!(t.rank(), 0);
        assert_eq!(t.numel(), 1);
        assert_eq!(t.item().unwrap(), 2.5);
    }

    #[test]
    fn strides_row_major() {
        assert_eq!(strides_of(&[2, 3, 4]), vec![12, 4, 1]);
        assert_eq!(strides_of(&[5]), vec![1]);
        assert_eq!(strides_of(&[]), Vec::<usize>::new());
    }
}
