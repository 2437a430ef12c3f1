//! Dense `f32` tensors and the small reverse-mode autodiff engine the model
//! is built on.
//!
//! [`Tensor`] is a plain immutable value. Gradient tracking lives on a
//! [`Tape`], which records every operation applied to its [`Var`] handles in
//! execution order and replays the chain rule backwards from a scalar loss.

pub mod gradcheck;
mod kernels;
mod optim;
mod tape;

pub use kernels::{
    bilinear_upsample, conv2d, conv_output_size, global_avg_pool, maxpool2d, relu, softmax,
};
pub use optim::{clip_grad_norm, sgd_step, Parameter};
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Row-major `f32` array with an explicit shape.
///
/// A tensor with an empty shape is a scalar holding one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                shape,
                reason: format!("expected {expected} elements, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Caller guarantees `product(shape) == data.len()`.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_parts(Vec::new(), vec![value])
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(&mut f).collect())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f32> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::InvalidShape {
                op: "item",
                shape: self.shape.clone(),
                reason: "expected exactly one element".into(),
            }),
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination of two same-shaped tensors.
    pub fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    /// Channel `c` of a `[C, H, W]` tensor as an `[H, W]` tensor.
    pub fn channel(&self, c: usize) -> Result<Self> {
        let (channels, h, w) = self.dims3("channel")?;
        if c >= channels {
            return Err(Error::IndexOutOfRange {
                what: "channel",
                index: c,
                bound: channels,
            });
        }
        let plane = h * w;
        Ok(Self::from_parts(
            vec![h, w],
            self.data[c * plane..(c + 1) * plane].to_vec(),
        ))
    }

    pub fn min(&self) -> f32 {
        self.data.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Index of the first maximal element.
    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [h, w] => Ok((h, w)),
            _ => Err(Error::InvalidShape {
                op,
                shape: self.shape.clone(),
                reason: "expected a 2-d tensor".into(),
            }),
        }
    }

    pub(crate) fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::InvalidShape {
                op,
                shape: self.shape.clone(),
                reason: "expected a 3-d tensor".into(),
            }),
        }
    }
}

pub(crate) fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
