use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;

use crate::error::{CelpError, Result};

/// Scalar type of every tensor in the crate. Implemented for `f32`
/// (training default) and `f64` (verification paths).
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Sum
    + Send
    + Sync
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const NAME: &'static str;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    fn of(x: f64) -> Self {
        x as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    fn of(x: f64) -> Self {
        x
    }

    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn shape_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(CelpError::dim(format!("zero extent in shape {shape:?}")));
        }
        if shape_len(&shape) != data.len() {
            return Err(CelpError::dim(format!(
                "shape {shape:?} needs {} values, got {}",
                shape_len(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape_len(&shape);
        Tensor {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape_len(&shape);
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn from_f64(shape: Vec<usize>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::of(x)).collect())
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

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }
}

/// A `C×h×w` activation grid. Position `i` addresses row-major cell
/// `(i / w, i % w)`; the feature vector at `i` is `data[c*h*w + i]` for
/// each channel `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    tensor: Tensor<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.shape().len() != 3 {
            return Err(CelpError::dim(format!(
                "feature map needs rank 3 (C×h×w), got shape {:?}",
                tensor.shape()
            )));
        }
        Ok(FeatureMap { tensor })
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        Self::new(Tensor::new(vec![channels, height, width], data)?)
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            tensor: Tensor::zeros(vec![channels, height, width]),
        }
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn positions(&self) -> usize {
        self.height() * self.width()
    }

    pub fn at(&self, channel: usize, position: usize) -> T {
        self.tensor.data()[channel * self.positions() + position]
    }

    /// Feature vector at one position, gathered across channels.
    pub fn vector(&self, position: usize) -> Vec<T> {
        let hw = self.positions();
        (0..self.channels())
            .map(|c| self.tensor.data()[c * hw + position])
            .collect()
    }

    /// Position-major copy: `hw` rows of `C` values.
    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.positions()).map(|i| self.vector(i)).collect()
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.tensor
    }

    pub fn data(&self) -> &[T] {
        self.tensor.data()
    }

    pub fn same_grid(&self, height: usize, width: usize) -> bool {
        self.height() == height && self.width() == width
    }
}

/// Per-channel class representation produced by masked pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototype<T>(pub Vec<T>);

impl<T: Real> Prototype<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.0
    }

    pub fn to_tensor(&self) -> Tensor<T> {
        Tensor {
            shape: vec![self.0.len()],
            data: self.0.clone(),
        }
    }
}
