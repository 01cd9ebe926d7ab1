//! Dense rank-4 tensors and the numeric kernels the graph interpreter runs on.
//!
//! Values are stored as `f64` in row-major `(n, c, h, w)` order. Every kernel is
//! a pure function of its inputs.

mod conv;
mod ops;
mod resize;

pub use conv::{conv2d, conv2d_input_grad, conv2d_weight_grad, conv_output_extent, ConvGeometry};
pub use ops::{binary, concat_channels, pointwise, sigmoid, spatial_sum, split_channels, Binary, Pointwise};
pub(crate) use resize::for_each_resize_tap;
pub use resize::{bilinear_resize, bilinear_resize_transpose, resize_taps, AxisTap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("invalid shape {shape:?}: {detail}")]
    InvalidShape { shape: Vec<usize>, detail: String },
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Extents of a rank-4 tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
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

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn from_slice(dims: &[usize]) -> Result<Self> {
        match dims {
            [n, c, h, w] => {
                let s = Shape::new(*n, *c, *h, *w);
                s.check()?;
                Ok(s)
            }
            _ => Err(TensorError::InvalidShape {
                shape: dims.to_vec(),
                detail: "expected four extents (n, c, h, w)".into(),
            }),
        }
    }

    fn check(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(TensorError::InvalidShape {
                shape: self.dims().to_vec(),
                detail: "all extents must be >= 1".into(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.n, self.c, self.h, self.w)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            data: vec![0.0; shape.numel()],
            shape,
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            data: vec![value; shape.numel()],
            shape,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.check()?;
        if data.len() != shape.numel() {
            return Err(TensorError::InvalidShape {
                shape: shape.dims().to_vec(),
                detail: format!("expected {} values, got {}", shape.numel(), data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    /// Single-sample tensor built from one `(h, w)` plane per channel.
    pub fn from_planes(planes: &[Vec<f64>], h: usize, w: usize) -> Result<Self> {
        let data: Vec<f64> = planes.iter().flatten().copied().collect();
        Tensor::from_vec(Shape::new(1, planes.len(), h, w), data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.offset(n, c, y, x)]
    }

    #[inline]
    pub fn at_mut(&mut self, n: usize, c: usize, y: usize, x: usize) -> &mut f64 {
        let o = self.shape.offset(n, c, y, x);
        &mut self.data[o]
    }

    /// The `(h, w)` plane of channel `c` in sample `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        self.map(|v| v * alpha)
    }

    /// Element-wise accumulate `other` into `self`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Sums over channels, returning a single-channel tensor.
    pub fn sum_channels(&self) -> Tensor {
        let s = self.shape;
        let mut out = Tensor::zeros(Shape::new(s.n, 1, s.h, s.w));
        for n in 0..s.n {
            for c in 0..s.c {
                let src = self.plane(n, c).to_vec();
                for (o, v) in out.plane_mut(n, 0).iter_mut().zip(src) {
                    *o += v;
                }
            }
        }
        out
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                op,
                detail: format!("{} vs {}", self.shape, other.shape),
            });
        }
        Ok(())
    }
}

/// One value per channel of a layer's output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelVector {
    pub layer_id: String,
    pub values: Vec<f64>,
}

impl ChannelVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_extent_and_wrong_length() {
        assert!(Tensor::from_vec(Shape::new(1, 0, 2, 2), vec![]).is_err());
        assert!(Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0; 3]).is_err());
        assert!(Shape::from_slice(&[1, 2, 3]).is_err());
    }

    #[test]
    fn offset_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.offset(1, 2, 3, 4), s.numel() - 1);
        assert_eq!(s.offset(0, 1, 0, 0), 20);
    }
}
