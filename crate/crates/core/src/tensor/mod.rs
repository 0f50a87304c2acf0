//! Dense row-major tensors and the numeric kernels the rest of the engine is
//! built from. Image tensors use NHWC layout throughout.

pub(crate) mod conv;
mod linalg;
pub(crate) mod norm;
mod scalar;

pub use conv::{
    conv2d, conv2d_slices, depthwise_conv2d, depthwise_conv2d_slices, ConvConfig, ConvGeometry,
    Padding,
};
pub use linalg::{matmul, matmul_slices};
pub use norm::{
    batch_norm, batch_norm_apply_slices, batch_statistics, BatchNormMode, BatchNormParams,
    DEFAULT_BN_EPS, DEFAULT_BN_MOMENTUM,
};
pub use scalar::{DType, Scalar};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    /// Builds a tensor from a shape and a copy of `data`.
    pub fn new(shape: &[usize], data: &[T]) -> Result<Self> {
        Self::from_vec(shape.to_vec(), data.to_vec())
    }

    pub fn from_vec(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Result<Self> {
        validate_shape(shape)?;
        let n = shape.iter().product();
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// Row-major element lookup.
    pub fn get(&self, index: &[usize]) -> Option<T> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &extent) in index.iter().zip(&self.shape) {
            if i >= extent {
                return None;
            }
            flat = flat * extent + i;
        }
        Some(self.data[flat])
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape.to_vec(), self.data)
    }

    /// `[N, H, W, C] -> [N, H*W*C]`.
    pub fn flatten(&self) -> Result<Self> {
        if self.rank() != 4 {
            return Err(Error::shape(format!(
                "flatten expects a rank-4 NHWC tensor, got shape {:?}",
                self.shape
            )));
        }
        let n = self.shape[0];
        let rest = self.len() / n;
        Self::from_vec(vec![n, rest], self.data.clone())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn relu(&self) -> Self {
        self.map(relu_scalar)
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid_scalar)
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<f64> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
                .fold(0.0, f64::max),
        )
    }

    /// Bitwise equality of shape and payload (distinguishes `-0.0` and NaN payloads).
    pub fn bit_eq(&self, other: &Tensor<T>) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::shape("tensors must have rank >= 1"));
    }
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::shape(format!(
            "all extents must be positive, got {:?}",
            shape
        )));
    }
    Ok(())
}

#[inline]
pub fn relu_scalar<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}

/// Logistic function evaluated without overflowing `exp` for large |x|.
#[inline]
pub fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn relu_in_place<T: Scalar>(data: &mut [T]) {
    for v in data {
        *v = relu_scalar(*v);
    }
}

pub fn sigmoid_in_place<T: Scalar>(data: &mut [T]) {
    for v in data {
        *v = sigmoid_scalar(*v);
    }
}

/// Mean over the spatial axes: `[N, H, W, C] -> [N, C]`.
pub fn global_avg_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 4 {
        return Err(Error::shape(format!(
            "global average pool expects NHWC input, got {:?}",
            x.shape()
        )));
    }
    let [n, h, w, c] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
    let mut out = vec![T::zero(); n * c];
    global_avg_pool_slices(x.data(), [n, h, w, c], &mut out);
    Tensor::from_vec(vec![n, c], out)
}

pub fn global_avg_pool_slices<T: Scalar>(input: &[T], shape: [usize; 4], out: &mut [T]) {
    let [n, h, w, c] = shape;
    let inv = T::one() / T::from_usize(h * w);
    for b in 0..n {
        let dst = &mut out[b * c..(b + 1) * c];
        dst.iter_mut().for_each(|v| *v = T::zero());
        let src = &input[b * h * w * c..(b + 1) * h * w * c];
        for px in src.chunks_exact(c) {
            for (d, &s) in dst.iter_mut().zip(px) {
                *d += s;
            }
        }
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
}
