//! Dense 4-D f64 arrays and the operators the network is built from.
//!
//! Every tensor is `(n, c, h, w)` in row-major order. Forward kernels live in
//! [`kernels`] as plain functions on tensors; [`Tape`] records them for
//! reverse-mode differentiation.

mod conv;
mod gradcheck;
mod kernels;
mod resize;
mod tape;

pub use conv::{conv2d, Conv2dSpec};
pub use gradcheck::{grad_check, max_relative_error, GradCheckOp};
pub use kernels::{
    add, concat_channels, global_avg_pool, mul, pointwise, relu, scale_channels, sigmoid, slice_channels, sub, sum_all,
    Pointwise,
};
pub use resize::{bilinear_upsample, resize_bilinear};
pub use tape::{Gradients, NodeId, Op, Tape};

use crate::error::{Error, Result};
use rand::Rng;
use std::fmt;

/// Dimensions of a tensor: batch, channels, rows, columns.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn same_spatial(&self, other: &Shape) -> bool {
        self.n == other.n && self.h == other.h && self.w == other.w
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl From<[usize; 4]> for Shape {
    fn from(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }
}

/// Immutable dense array of 64-bit reals.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, checking that every dimension is positive and that
    /// `data` has exactly `shape.numel()` entries.
    pub fn new(shape: impl Into<Shape>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0 {
            return Err(Error::shape("tensor", format!("zero dimension in {shape}")));
        }
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "tensor",
                format!("{} values for shape {shape} ({} expected)", data.len(), shape.numel()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    /// Internal constructor for kernels that already guarantee the length.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn full(shape: impl Into<Shape>, value: f64) -> Self {
        let shape = shape.into();
        Tensor::from_parts(shape, vec![value; shape.numel()])
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    pub fn from_fn(shape: impl Into<Shape>, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let shape = shape.into();
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor::from_parts(shape, data)
    }

    /// Values drawn uniformly from `[lo, hi)`.
    pub fn random_uniform(shape: impl Into<Shape>, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
        Tensor::from_parts(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(n, c, y, x)]
    }

    /// Scalar value of a `1x1x1x1` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.shape != Shape::scalar() {
            return Err(Error::shape("item", format!("expected 1x1x1x1, got {}", self.shape)));
        }
        Ok(self.data[0])
    }

    /// Same data viewed under a different shape of equal element count.
    pub fn reshape(self, shape: impl Into<Shape>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy with one element replaced, used by finite-difference probes.
    pub fn with_value(&self, flat_index: usize, value: f64) -> Tensor {
        let mut data = self.data.clone();
        data[flat_index] = value;
        Tensor::from_parts(self.shape, data)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Sequential sum of squares, square-rooted.
    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Sample `n` as a `1 x c x h x w` tensor.
    pub fn sample(&self, n: usize) -> Tensor {
        let per = self.shape.c * self.shape.plane();
        let shape = Shape::new(1, self.shape.c, self.shape.h, self.shape.w);
        Tensor::from_parts(shape, self.data[n * per..(n + 1) * per].to_vec())
    }

    /// Stacks equally shaped tensors along the batch axis.
    pub fn stack_batch(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("stack_batch", "no tensors"))?
            .shape;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if (p.shape.c, p.shape.h, p.shape.w) != (first.c, first.h, first.w) {
                return Err(Error::shape(
                    "stack_batch",
                    format!("{} does not match {}", p.shape, first),
                ));
            }
            n += p.shape.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(Shape::new(n, first.c, first.h, first.w), data))
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor({}, [", self.shape)?;
        for (i, v) in self.data.iter().take(SHOWN).enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        if self.data.len() > SHOWN {
            write!(f, ", ...")?;
        }
        write!(f, "])")
    }
}
