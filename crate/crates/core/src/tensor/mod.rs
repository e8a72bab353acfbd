//! Minimal reverse-mode differentiable tensor engine.
//!
//! Every value is a [`Tensor5`] laid out row-major in `(batch, channel, time,
//! height, width)` order. Operations are recorded on a [`Graph`] and
//! differentiated by [`Graph::backward`]. Trainable parameters and
//! non-trainable buffers (batch-norm running statistics) live in a
//! [`ParamStore`] outside of any graph so that a fresh graph can be built for
//! every forward pass.
//!
//! All kernels are single threaded and every reduction runs in a fixed order,
//! so identical inputs produce bit-identical outputs.

mod gemm;
mod graph;
mod ops;
mod params;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use gemm::{gemm, MatRef};
pub use graph::{Gradients, Graph, Mode, StatUpdate, Var};
pub use ops::{Activation, ConvSpec, Padding, BN_EPS, BN_MOMENTUM, ELU_ALPHA};
pub use params::{Param, ParamId, ParamStore};

/// Extents of a 5-D tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims5 {
    pub b: usize,
    pub c: usize,
    pub t: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims5 {
    pub const fn new(b: usize, c: usize, t: usize, h: usize, w: usize) -> Self {
        Self { b, c, t, h, w }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.b * self.c * self.t * self.h * self.w
    }

    /// Number of elements in one `(t, h, w)` volume.
    pub const fn volume(&self) -> usize {
        self.t * self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 5] {
        [self.b, self.c, self.t, self.h, self.w]
    }

    pub fn from_slice(dims: &[usize]) -> Option<Self> {
        match *dims {
            [b, c, t, h, w] => Some(Self::new(b, c, t, h, w)),
            _ => None,
        }
    }

    pub fn get(&self, axis: Axis) -> usize {
        self.as_array()[axis as usize]
    }

    pub(crate) fn with(mut self, axis: Axis, len: usize) -> Self {
        match axis {
            Axis::Batch => self.b = len,
            Axis::Channel => self.c = len,
            Axis::Time => self.t = len,
            Axis::Height => self.h = len,
            Axis::Width => self.w = len,
        }
        self
    }
}

impl fmt::Display for Dims5 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{},{})", self.b, self.c, self.t, self.h, self.w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    Batch = 0,
    Channel = 1,
    Time = 2,
    Height = 3,
    Width = 4,
}

impl Axis {
    pub const ALL: [Axis; 5] = [
        Axis::Batch,
        Axis::Channel,
        Axis::Time,
        Axis::Height,
        Axis::Width,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Axis::Batch => "batch",
            Axis::Channel => "channel",
            Axis::Time => "time",
            Axis::Height => "height",
            Axis::Width => "width",
        }
    }
}

/// Batched 5-D feature volume.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor5 {
    dims: Dims5,
    data: Vec<f32>,
    pub requires_grad: bool,
    pub grad: Option<Vec<f32>>,
}

impl Tensor5 {
    pub fn new(dims: Dims5, data: Vec<f32>) -> Result<Self> {
        if data.len() != dims.numel() {
            return Err(Error::InvalidInput {
                op: "Tensor5::new",
                reason: format!(
                    "{} values supplied for dims {} ({} expected)",
                    data.len(),
                    dims,
                    dims.numel()
                ),
            });
        }
        Ok(Self {
            dims,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(dims: Dims5) -> Self {
        Self::full(dims, 0.0)
    }

    pub fn full(dims: Dims5, value: f32) -> Self {
        Self {
            dims,
            data: vec![value; dims.numel()],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: f32) -> Self {
        Self::full(Dims5::scalar(), value)
    }

    pub fn from_fn(dims: Dims5, mut f: impl FnMut([usize; 5]) -> f32) -> Self {
        let mut data = Vec::with_capacity(dims.numel());
        for b in 0..dims.b {
            for c in 0..dims.c {
                for t in 0..dims.t {
                    for h in 0..dims.h {
                        for w in 0..dims.w {
                            data.push(f([b, c, t, h, w]));
                        }
                    }
                }
            }
        }
        Self {
            dims,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    pub fn dims(&self) -> Dims5 {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn offset(&self, idx: [usize; 5]) -> usize {
        let d = self.dims;
        (((idx[0] * d.c + idx[1]) * d.t + idx[2]) * d.h + idx[3]) * d.w + idx[4]
    }

    pub fn at(&self, idx: [usize; 5]) -> f32 {
        self.data[self.offset(idx)]
    }

    /// Same data viewed under new extents with identical element count.
    pub fn reshaped(mut self, dims: Dims5) -> Result<Self> {
        if dims.numel() != self.dims.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                left: self.dims,
                right: dims,
            });
        }
        self.dims = dims;
        self.grad = None;
        Ok(self)
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f32 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(index) => Err(Error::NonFinite { op, index }),
            None => Ok(()),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor5) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }
}

pub(crate) fn check_axis(
    op: &'static str,
    axis: Axis,
    expected: usize,
    found: usize,
) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            op,
            axis: axis.name(),
            expected,
            found,
        })
    }
}
