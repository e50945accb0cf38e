//! Dense arrays and the differentiable primitives the classifier is built from.
//!
//! Every primitive comes as a forward function plus an analytic backward
//! function. [`crate::tape`] strings them together for whole-model gradients.

pub(crate) mod conv;
mod error;
mod linear;
mod loss;
mod norm;
mod pointwise;
mod pool;
mod real;

pub use conv::{
    conv1d_backward, conv1d_forward, ConvGrads, ConvMode, ConvRecord, ConvSpec,
};
pub use error::TensorError;
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use loss::{softmax, softmax_cross_entropy, CrossEntropy};
pub use norm::{
    batch_norm_backward, batch_norm_forward, BatchNormCache, BatchNormConfig, RunningStats,
};
pub use pointwise::{
    add, dropout_backward, dropout_forward, dropout_mask, relu_backward, relu_forward, DropoutKey,
};
pub use pool::{global_avg_pool_backward, global_avg_pool_forward};
pub use real::Real;

/// Forward-pass behaviour of layers that differ between training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// A dense row-major array.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self, TensorError> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, values: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape, values.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self, TensorError> {
        Self::new(shape, self.data)
    }

    /// Extents of a rank-3 tensor, `[batch, channels, length]`.
    pub fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(TensorError::Rank {
                op,
                expected: 3,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64_lossy()).collect()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sum of squares, accumulated in 64-bit.
    pub fn sum_squares(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let v = v.to_f64_lossy();
                v * v
            })
            .sum()
    }

    /// Contiguous slice of the `index`-th entry along the leading axis.
    pub fn outer(&self, index: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0].max(1);
        &self.data[index * stride..(index + 1) * stride]
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor<T>]) -> Result<Self, TensorError> {
        let first = items.first().ok_or(TensorError::EmptyBatch { op: "stack" })?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.len() * items.len());
        for item in items {
            if item.shape != first.shape {
                return Err(TensorError::ShapeMismatch {
                    op: "stack",
                    what: "item shape".into(),
                    expected: first.shape.clone(),
                    actual: item.shape.clone(),
                });
            }
            data.extend_from_slice(&item.data);
        }
        Ok(Self { shape, data })
    }
}
