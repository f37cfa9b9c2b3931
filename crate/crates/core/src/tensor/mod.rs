//! Dense 4-D tensors and the reverse-mode autodiff engine built on them.
//!
//! Layout is always row-major `(batch, channel, height, width)` in `f64`.
//! Tensors are immutable after construction and cheap to clone (shared
//! storage), so they can be held both by callers and by graph nodes.

mod adam;
mod conv;
mod graph;
pub(crate) mod matmul;

pub use adam::{adam_step, AdamState};
pub use conv::{conv2d_out_extent, Conv2dSpec};
pub use graph::{ElementwiseKind, Gradients, Graph, NodeId, SOBEL_X, SOBEL_Y};

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Extents of a 4-D tensor: `(batch, channel, height, width)`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    /// Shape of a scalar value as carried through the graph.
    pub fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Immutable dense tensor. Cloning shares the underlying storage.
#[derive(Clone, Debug)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.numel()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![0.0; shape.numel()]),
        }
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor {
            shape,
            data: Arc::new(vec![value; shape.numel()]),
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::full(Shape::scalar(), value)
    }

    /// Builds a tensor by evaluating `f(b, c, y, x)` at every coordinate.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.batch {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        let s = &self.shape;
        debug_assert!(b < s.batch && c < s.channels && y < s.height && x < s.width);
        self.data[((b * s.channels + c) * s.height + y) * s.width + x]
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert!(self.shape.is_scalar(), "item() on non-scalar {}", self.shape);
        self.data[0]
    }

    /// The `(height, width)` plane at `(b, c)` as a contiguous slice.
    pub fn plane(&self, b: usize, c: usize) -> &[f64] {
        let hw = self.shape.height * self.shape.width;
        let off = (b * self.shape.channels + c) * hw;
        &self.data[off..off + hw]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    /// Rejects NaN/Inf anywhere in the tensor. `who` names the tensor in the error.
    pub fn audit_finite(&self, who: &str) -> Result<()> {
        for (i, &v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{who}: element {i} of shape {} is {v}",
                    self.shape
                )));
            }
        }
        Ok(())
    }

    /// Mutates the underlying storage in place when uniquely owned,
    /// copying first otherwise. Used by the optimizer between steps.
    pub fn update_in_place(&mut self, f: impl FnOnce(&mut [f64])) {
        f(Arc::make_mut(&mut self.data).as_mut_slice());
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }
}

/// Concatenates tensors along the batch axis.
pub fn stack_batch(parts: &[Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Shape("stack_batch of zero parts".into()))?
        .shape();
    let mut batch = 0;
    for t in parts {
        let s = t.shape();
        if (s.channels, s.height, s.width) != (first.channels, first.height, first.width) {
            return Err(Error::Shape(format!(
                "stack_batch: {s} does not match {first}"
            )));
        }
        batch += s.batch;
    }
    let mut data = Vec::with_capacity(batch * first.channels * first.height * first.width);
    for t in parts {
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::from_parts(
        Shape::new(batch, first.channels, first.height, first.width),
        data,
    ))
}
