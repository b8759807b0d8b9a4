//! Dense channel-major tensors used by the integer executor.

use crate::model::TensorShape;

/// Channel-major `(channel, row, column)` tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor<T> {
    pub shape: TensorShape,
    pub data: Vec<T>,
}

impl<T: Copy + Default> Tensor<T> {
    pub fn zeros(shape: TensorShape) -> Self {
        Self { shape, data: vec![T::default(); shape.len()] }
    }

    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(shape: TensorShape, data: Vec<T>) -> Self {
        assert_eq!(shape.len(), data.len(), "tensor data does not match shape {shape}");
        Self { shape, data }
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let plane = self.shape.plane();
        &self.data[c * plane..(c + 1) * plane]
    }

    /// Same data viewed with a new shape of equal size.
    pub fn reshaped(self, shape: TensorShape) -> Self {
        Self::from_vec(shape, self.data)
    }
}

pub type IntTensor8 = Tensor<i8>;
pub type IntTensor32 = Tensor<i32>;

/// An intermediate activation: int8 feature maps or int32 accumulators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Activation {
    I8(Tensor<i8>),
    I32(Tensor<i32>),
}

impl Activation {
    pub fn shape(&self) -> TensorShape {
        match self {
            Activation::I8(t) => t.shape,
            Activation::I32(t) => t.shape,
        }
    }

    pub fn as_i8(&self) -> Option<&Tensor<i8>> {
        match self {
            Activation::I8(t) => Some(t),
            Activation::I32(_) => None,
        }
    }

    pub fn as_i32(&self) -> Option<&Tensor<i32>> {
        match self {
            Activation::I32(t) => Some(t),
            Activation::I8(_) => None,
        }
    }
}
