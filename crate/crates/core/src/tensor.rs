//! Dense row-major tensors in 64-bit floating point.
//!
//! Feature maps follow the `[B, C, D, H, W]` convention; unbatched maps drop
//! the leading axis.

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Ordered list of positive extents.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "shape extents must be >= 1, got {dims:?}"
            )));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::DimensionOverflow(format!("{dims:?}")))?;
        Ok(Shape(dims))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Product of the extents after the first two axes (the "spatial" size
    /// of a `[B, C, ...]` map). Returns 1 for rank-2 shapes.
    pub fn spatial_numel(&self) -> usize {
        self.0.iter().skip(2).product()
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl From<&[usize]> for Shape {
    fn from(d: &[usize]) -> Self {
        Shape::new(d.to_vec()).expect("invalid shape")
    }
}

/// Dense tensor with an optional gradient slot of identical length.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl Tensor {
    pub fn from_vec(dims: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(shape_err(
                "Tensor::from_vec",
                format!("shape {:?} needs {} elements, got {}", shape, shape.numel(), data.len()),
            ));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = Shape::new(dims).expect("invalid shape");
        let n = shape.numel();
        Tensor { shape, data: vec![value; n], grad: None }
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn ones(dims: impl Into<Vec<usize>>) -> Self {
        Self::full(dims, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::full(vec![1], value)
    }

    /// Zero-mean normal draws with the given standard deviation.
    pub fn randn<R: Rng + ?Sized>(dims: impl Into<Vec<usize>>, std: f64, rng: &mut R) -> Self {
        let shape = Shape::new(dims).expect("invalid shape");
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor { shape, data, grad: None }
    }

    /// Uniform draws on `[lo, hi)`.
    pub fn uniform<R: Rng + ?Sized>(dims: impl Into<Vec<usize>>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let shape = Shape::new(dims).expect("invalid shape");
        let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor { shape, data, grad: None }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    /// Single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(shape_err(
                "Tensor::set_grad",
                format!("grad length {} vs data length {}", grad.len(), self.data.len()),
            ));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = 0.0),
            None => self.grad = Some(vec![0.0; self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn reshape(mut self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(self, op: &str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(op.to_string()))
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }
}

/// Extents of a feature map viewed as `[B, C, D, H, W]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dims5 {
    pub b: usize,
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims5 {
    pub fn of(t: &Tensor, op: &'static str) -> Result<Self> {
        match *t.dims() {
            [b, c, d, h, w] => Ok(Dims5 { b, c, d, h, w }),
            _ => Err(shape_err(op, format!("expected [B,C,D,H,W], got {:?}", t.shape()))),
        }
    }

    pub fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn to_vec(self) -> Vec<usize> {
        vec![self.b, self.c, self.d, self.h, self.w]
    }
}
