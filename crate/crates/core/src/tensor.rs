//! Dense row-major tensors with shapes `[C, H, W]` or `[B, C, H, W]`.
//!
//! Shapes are plain `Vec<usize>`; the autodiff tape and the networks only
//! ever need rank 3 and 4, but the container is rank-agnostic.

use crate::{HyldaError, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![S::zero(); n] }
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(HyldaError::Shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Element access for `[C, H, W]` tensors.
    pub fn at3(&self, c: usize, h: usize, w: usize) -> S {
        debug_assert_eq!(self.shape.len(), 3);
        let (hh, ww) = (self.shape[1], self.shape[2]);
        self.data[(c * hh + h) * ww + w]
    }

    pub fn set3(&mut self, c: usize, h: usize, w: usize, v: S) {
        debug_assert_eq!(self.shape.len(), 3);
        let (hh, ww) = (self.shape[1], self.shape[2]);
        self.data[(c * hh + h) * ww + w] = v;
    }

    /// Element access for `[B, C, H, W]` tensors.
    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> S {
        debug_assert_eq!(self.shape.len(), 4);
        let (cc, hh, ww) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((b * cc + c) * hh + h) * ww + w]
    }

    pub fn set4(&mut self, b: usize, c: usize, h: usize, w: usize, v: S) {
        debug_assert_eq!(self.shape.len(), 4);
        let (cc, hh, ww) = (self.shape[1], self.shape[2], self.shape[3]);
        self.data[((b * cc + c) * hh + h) * ww + w] = v;
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    /// Casts every element into another scalar type through `f64`.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|x| crate::scalar::<T>(x.to_f64().expect("finite scalar")))
                .collect(),
        }
    }

    /// Stacks `[C, H, W]` tensors into `[B, C, H, W]`. All inputs must share a shape.
    pub fn stack(items: &[&Tensor<S>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| HyldaError::Shape("stack of zero tensors".into()))?;
        if first.shape.len() != 3 {
            return Err(HyldaError::Shape(format!("stack wants rank-3 inputs, got {:?}", first.shape)));
        }
        let mut data = Vec::with_capacity(items.len() * first.len());
        for t in items {
            if t.shape != first.shape {
                return Err(HyldaError::Shape(format!(
                    "stack shape mismatch: {:?} vs {:?}",
                    t.shape, first.shape
                )));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }
}
