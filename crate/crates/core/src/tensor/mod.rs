//! Dense row-major arrays and the kernels that operate on them.
//!
//! Every [`NdArray`] carries a [`Dtype`]. `F16` arrays are stored as `f32`
//! values restricted to the binary16 value set; constructors and kernels
//! quantize on write so the invariant holds after every operation.
//! Accumulations always run in `f32`.

mod half;
mod ops;
mod rng;

pub use self::half::{f16_bits_to_f32, f32_to_f16_bits, quantize_f16, F16_MAX, F16_MIN_POSITIVE_SUBNORMAL};
pub use self::ops::{add, fill, gemm_nn, gemm_nt, gemm_tn, matmul, maximum, mul, scale, sub};
pub use self::rng::{seeded_uniform, Rng};

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Dtype {
    #[default]
    F32,
    F16,
}

impl Dtype {
    /// Promotion used by binary kernels: any `F32` operand widens the result.
    pub fn join(self, other: Dtype) -> Dtype {
        if self == Dtype::F16 && other == Dtype::F16 {
            Dtype::F16
        } else {
            Dtype::F32
        }
    }

    #[inline]
    pub fn store(self, x: f32) -> f32 {
        match self {
            Dtype::F32 => x,
            Dtype::F16 => quantize_f16(x),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F16 => "f16",
        }
    }
}

impl fmt::Display for Dtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Number of elements of a shape; the empty shape is a scalar.
pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NdArray {
    dtype: Dtype,
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl NdArray {
    pub fn zeros(shape: &[usize], dtype: Dtype) -> Self {
        NdArray {
            dtype,
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: f32, dtype: Dtype) -> Self {
        NdArray {
            dtype,
            shape: shape.to_vec(),
            data: vec![dtype.store(value); numel(shape)],
        }
    }

    pub fn scalar(value: f32) -> Self {
        NdArray {
            dtype: Dtype::F32,
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        Self::from_vec_dtype(shape, data, Dtype::F32)
    }

    /// Builds an array, quantizing `data` when `dtype` is `F16`.
    pub fn from_vec_dtype(shape: &[usize], mut data: Vec<f32>, dtype: Dtype) -> Result<Self> {
        if data.len() != numel(shape) {
            return Err(Error::shape(format!("{} values for shape {:?}", data.len(), shape)));
        }
        if dtype == Dtype::F16 {
            data.iter_mut().for_each(|v| *v = quantize_f16(*v));
        }
        Ok(NdArray {
            dtype,
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value of a single-element array.
    pub fn item(&self) -> Option<f32> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Applies `f` to every element, re-establishing the dtype invariant.
    pub fn map_inplace(&mut self, mut f: impl FnMut(f32) -> f32) {
        let dtype = self.dtype;
        self.data.iter_mut().for_each(|v| *v = dtype.store(f(*v)));
    }

    /// Mutable access to the raw buffer. The caller must call
    /// [`NdArray::requantize`] afterwards if the array is `F16`.
    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub(crate) fn requantize(&mut self) {
        if self.dtype == Dtype::F16 {
            self.data.iter_mut().for_each(|v| *v = quantize_f16(*v));
        }
    }

    pub fn to_dtype(&self, dtype: Dtype) -> NdArray {
        let mut out = NdArray {
            dtype,
            shape: self.shape.clone(),
            data: self.data.clone(),
        };
        if dtype != self.dtype {
            out.requantize();
        }
        out
    }

    pub fn into_dtype(mut self, dtype: Dtype) -> NdArray {
        if dtype != self.dtype {
            self.dtype = dtype;
            self.requantize();
        }
        self
    }

    /// Same data viewed under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<NdArray> {
        if numel(shape) != self.data.len() {
            return Err(Error::shape(format!("cannot reshape {:?} to {:?}", self.shape, shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn has_inf_or_nan(&self) -> bool {
        has_inf_or_nan(self)
    }

    /// Bitwise equality of dtype, shape, and every element.
    pub fn bit_eq(&self, other: &NdArray) -> bool {
        self.dtype == other.dtype
            && self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }

    /// True when every element already is a binary16 value.
    pub fn is_f16_exact(&self) -> bool {
        self.data
            .iter()
            .all(|&v| quantize_f16(v).to_bits() == v.to_bits() || v.is_nan())
    }

    pub fn sum(&self) -> f32 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f32 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// True iff any element is infinite or NaN.
pub fn has_inf_or_nan(a: &NdArray) -> bool {
    a.data.iter().any(|v| !v.is_finite())
}
