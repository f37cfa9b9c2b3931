//! Reverse-mode autodiff over a build-order tape.
//!
//! A [`Graph`] records one forward pass as an append-only list of nodes;
//! construction order is the topological order. [`Graph::backward`] walks
//! the tape once in reverse and returns a gradient per `requires_grad`
//! leaf. A graph is single-use: after backward it is finalized and any
//! further building is a state error.

use crate::error::{Error, Result};
use crate::wavelet::{dwt2_stacked, idwt2_stacked, WaveletKind};

use super::conv::{check_conv_shapes, conv2d_backward, conv2d_forward, Conv2dSpec};
use super::{Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0
    }
}

pub const SOBEL_X: [f64; 9] = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
pub const SOBEL_Y: [f64; 9] = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    ClampMin(NodeId, f64),
    Scale(NodeId, f64),
    Abs(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MuLaw(NodeId, f64),
    Sobel(NodeId, [f64; 9]),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        spec: Conv2dSpec,
    },
    ConcatChannels(Vec<NodeId>),
    SliceChannels {
        input: NodeId,
        start: usize,
        len: usize,
    },
    Dwt2(NodeId, WaveletKind),
    Idwt2(NodeId, WaveletKind),
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Elementwise operation selector, mostly for driving uniform test sweeps.
#[derive(Clone, Copy, Debug)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
}

/// Gradients returned by [`Graph::backward`], indexed by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    finalized: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].value.shape()
    }

    fn check_building(&self) -> Result<()> {
        if self.finalized {
            Err(Error::State(
                "graph already consumed by backward; build a new graph".into(),
            ))
        } else {
            Ok(())
        }
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Inserts a tensor as a graph input. `requires_grad` marks it as a
    /// parameter to differentiate against.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        self.check_building()?;
        Ok(self.push(Op::Leaf, value, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, false)
    }

    fn binary_shape_check(&self, a: NodeId, b: NodeId, what: &str) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa} vs {sb}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_building()?;
        self.binary_shape_check(a, b, "add")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_building()?;
        self.binary_shape_check(a, b, "sub")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_building()?;
        self.binary_shape_check(a, b, "mul")?;
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    fn unary(&mut self, x: NodeId, op: Op, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        self.check_building()?;
        let v = self.value(x).map(f);
        let rg = self.requires(x);
        Ok(self.push(op, v, rg))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Sigmoid(x), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> Result<NodeId> {
        self.unary(x, Op::LeakyRelu(x, slope), move |v| {
            if v > 0.0 {
                v
            } else {
                slope * v
            }
        })
    }

    /// `max(x, min)` with pass-through gradient strictly above `min`.
    pub fn clamp_min(&mut self, x: NodeId, min: f64) -> Result<NodeId> {
        self.unary(x, Op::ClampMin(x, min), move |v| v.max(min))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        self.unary(x, Op::Scale(x, s), move |v| s * v)
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(x, Op::Abs(x), f64::abs)
    }

    /// `log(1 + mu*x) / log(1 + mu)`, the mu-law compressor. Inputs must be
    /// non-negative; clamp first when the sign is not guaranteed.
    pub fn mu_law(&mut self, x: NodeId, mu: f64) -> Result<NodeId> {
        if mu <= 0.0 {
            return Err(Error::Config(format!("mu must be positive, got {mu}")));
        }
        let denom = (1.0 + mu).ln();
        self.unary(x, Op::MuLaw(x, mu), move |v| (1.0 + mu * v).ln() / denom)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_building()?;
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        Ok(self.push(Op::Sum(x), Tensor::scalar(s), rg))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_building()?;
        let n = self.value(x).numel() as f64;
        let s: f64 = self.value(x).data().iter().sum();
        let rg = self.requires(x);
        Ok(self.push(Op::Mean(x), Tensor::scalar(s / n), rg))
    }

    pub fn sobel_x(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_building()?;
        let v = sobel_filter(self.value(x), &SOBEL_X);
        let rg = self.requires(x);
        Ok(self.push(Op::Sobel(x, SOBEL_X), v, rg))
    }

    pub fn sobel_y(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_building()?;
        let v = sobel_filter(self.value(x), &SOBEL_Y);
        let rg = self.requires(x);
        Ok(self.push(Op::Sobel(x, SOBEL_Y), v, rg))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        spec: Conv2dSpec,
    ) -> Result<NodeId> {
        self.check_building()?;
        check_conv_shapes(
            self.shape(input),
            self.shape(weight),
            self.shape(bias),
            spec,
        )?;
        let v = conv2d_forward(self.value(input), self.value(weight), self.value(bias), spec)?;
        let rg = self.requires(input) || self.requires(weight) || self.requires(bias);
        Ok(self.push(
            Op::Conv2d {
                input,
                weight,
                bias,
                spec,
            },
            v,
            rg,
        ))
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        self.check_building()?;
        if parts.is_empty() {
            return Err(Error::Shape("concat of zero parts".into()));
        }
        let first = self.shape(parts[0]);
        let mut channels = 0;
        for &p in parts {
            let s = self.shape(p);
            if (s.batch, s.height, s.width) != (first.batch, first.height, first.width) {
                return Err(Error::Shape(format!(
                    "concat_channels: part {s} does not match {first}"
                )));
            }
            channels += s.channels;
        }
        let out_shape = Shape::new(first.batch, channels, first.height, first.width);
        let hw = first.height * first.width;
        let mut data = vec![0.0; out_shape.numel()];
        for b in 0..first.batch {
            let mut c_off = 0;
            for &p in parts {
                let s = self.shape(p);
                let src = &self.value(p).data()[b * s.channels * hw..(b + 1) * s.channels * hw];
                let dst_off = (b * channels + c_off) * hw;
                data[dst_off..dst_off + s.channels * hw].copy_from_slice(src);
                c_off += s.channels;
            }
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Op::ConcatChannels(parts.to_vec()),
            Tensor::from_parts(out_shape, data),
            rg,
        ))
    }

    pub fn slice_channels(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.check_building()?;
        let s = self.shape(input);
        if start + len > s.channels || len == 0 {
            return Err(Error::Shape(format!(
                "slice_channels [{start}, {}) out of {} channels",
                start + len,
                s.channels
            )));
        }
        let out_shape = Shape::new(s.batch, len, s.height, s.width);
        let hw = s.height * s.width;
        let mut data = vec![0.0; out_shape.numel()];
        for b in 0..s.batch {
            let src_off = (b * s.channels + start) * hw;
            let dst_off = b * len * hw;
            data[dst_off..dst_off + len * hw]
                .copy_from_slice(&self.value(input).data()[src_off..src_off + len * hw]);
        }
        let rg = self.requires(input);
        Ok(self.push(
            Op::SliceChannels { input, start, len },
            Tensor::from_parts(out_shape, data),
            rg,
        ))
    }

    /// One DWT level over every channel; bands stacked as
    /// `[LL | LH | HL | HH]` along the channel axis at half resolution.
    pub fn dwt2(&mut self, x: NodeId, kind: WaveletKind) -> Result<NodeId> {
        self.check_building()?;
        let v = dwt2_stacked(self.value(x), kind)?;
        let rg = self.requires(x);
        Ok(self.push(Op::Dwt2(x, kind), v, rg))
    }

    /// Inverse of [`Graph::dwt2`] on a stacked band tensor.
    pub fn idwt2(&mut self, x: NodeId, kind: WaveletKind) -> Result<NodeId> {
        self.check_building()?;
        let v = idwt2_stacked(self.value(x), kind)?;
        let rg = self.requires(x);
        Ok(self.push(Op::Idwt2(x, kind), v, rg))
    }

    pub fn elementwise(
        &mut self,
        kind: ElementwiseKind,
        a: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId> {
        let need_b = matches!(
            kind,
            ElementwiseKind::Add | ElementwiseKind::Sub | ElementwiseKind::Mul
        );
        match (need_b, b) {
            (true, None) => return Err(Error::Shape(format!("{kind:?} needs two operands"))),
            (false, Some(_)) => {
                return Err(Error::Shape(format!("{kind:?} takes a single operand")))
            }
            _ => {}
        }
        match kind {
            ElementwiseKind::Add => self.add(a, b.unwrap()),
            ElementwiseKind::Sub => self.sub(a, b.unwrap()),
            ElementwiseKind::Mul => self.mul(a, b.unwrap()),
            ElementwiseKind::Sigmoid => self.sigmoid(a),
            ElementwiseKind::Relu => self.relu(a),
            ElementwiseKind::LeakyRelu(s) => self.leaky_relu(a, s),
        }
    }

    /// Backpropagates from a scalar loss node. Finalizes the graph; every
    /// `requires_grad` leaf gets a gradient (zeros when untouched by the
    /// loss).
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        self.check_building()?;
        if !self.shape(loss).is_scalar() {
            return Err(Error::State(format!(
                "backward needs a scalar loss, got {}",
                self.shape(loss)
            )));
        }
        self.finalized = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].clone() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(&mut grads, a, g.clone());
                    self.accumulate(&mut grads, b, g);
                }
                Op::Sub(a, b) => {
                    let (a, b) = (*a, *b);
                    self.accumulate(&mut grads, a, g.clone());
                    self.accumulate(&mut grads, b, g.map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let ga = zip_map(&g, self.value(b), |gv, bv| gv * bv);
                    let gb = zip_map(&g, self.value(a), |gv, av| gv * av);
                    self.accumulate(&mut grads, a, ga);
                    self.accumulate(&mut grads, b, gb);
                }
                Op::Sigmoid(x) => {
                    let x = *x;
                    let gx = zip_map(&g, &self.nodes[i].value, |gv, y| gv * y * (1.0 - y));
                    self.accumulate(&mut grads, x, gx);
                }
                Op::Relu(x) => {
                    let x = *x;
                    let gx = zip_map(&g, self.value(x), |gv, v| if v > 0.0 { gv } else { 0.0 });
                    self.accumulate(&mut grads, x, gx);
                }
                Op::LeakyRelu(x, slope) => {
                    let (x, slope) = (*x, *slope);
                    let gx = zip_map(&g, self.value(x), |gv, v| {
                        if v > 0.0 {
                            gv
                        } else {
                            slope * gv
                        }
                    });
                    self.accumulate(&mut grads, x, gx);
                }
                Op::ClampMin(x, min) => {
                    let (x, min) = (*x, *min);
                    let gx = zip_map(&g, self.value(x), |gv, v| if v > min { gv } else { 0.0 });
                    self.accumulate(&mut grads, x, gx);
                }
                Op::Scale(x, s) => {
                    let (x, s) = (*x, *s);
                    self.accumulate(&mut grads, x, g.map(|v| s * v));
                }
                Op::Abs(x) => {
                    let x = *x;
                    let gx = zip_map(&g, self.value(x), |gv, v| gv * sign(v));
                    self.accumulate(&mut grads, x, gx);
                }
                Op::Sum(x) => {
                    let x = *x;
                    let gx = Tensor::full(self.shape(x), g.item());
                    self.accumulate(&mut grads, x, gx);
                }
                Op::Mean(x) => {
                    let x = *x;
                    let n = self.shape(x).numel() as f64;
                    let gx = Tensor::full(self.shape(x), g.item() / n);
                    self.accumulate(&mut grads, x, gx);
                }
                Op::MuLaw(x, mu) => {
                    let (x, mu) = (*x, *mu);
                    let denom = (1.0 + mu).ln();
                    let gx = zip_map(&g, self.value(x), |gv, v| {
                        gv * mu / ((1.0 + mu * v) * denom)
                    });
                    self.accumulate(&mut grads, x, gx);
                }
                Op::Sobel(x, k) => {
                    let (x, k) = (*x, *k);
                    let gx = sobel_adjoint(&g, &k);
                    self.accumulate(&mut grads, x, gx);
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    spec,
                } => {
                    let (input, weight, bias, spec) = (*input, *weight, *bias, *spec);
                    let (gi, gw, gb) =
                        conv2d_backward(self.value(input), self.value(weight), spec, &g);
                    self.accumulate(&mut grads, input, gi);
                    self.accumulate(&mut grads, weight, gw);
                    self.accumulate(&mut grads, bias, gb);
                }
                Op::ConcatChannels(parts) => {
                    let parts = parts.clone();
                    let mut start = 0;
                    for p in parts {
                        let ch = self.shape(p).channels;
                        let gp = slice_channels_data(&g, start, ch);
                        self.accumulate(&mut grads, p, gp);
                        start += ch;
                    }
                }
                Op::SliceChannels { input, start, len } => {
                    let (input, start, len) = (*input, *start, *len);
                    let gi = unslice_channels_data(&g, self.shape(input), start, len);
                    self.accumulate(&mut grads, input, gi);
                }
                Op::Dwt2(x, kind) => {
                    let (x, kind) = (*x, *kind);
                    let gx = idwt2_stacked(&g, kind)?;
                    self.accumulate(&mut grads, x, gx);
                }
                Op::Idwt2(x, kind) => {
                    let (x, kind) = (*x, *kind);
                    let gx = dwt2_stacked(&g, kind)?;
                    self.accumulate(&mut grads, x, gx);
                }
            }
            // Interior gradients are only needed while propagating.
            if !matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = None;
            }
        }

        // Parameters the loss never touched still report zero gradients.
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            slot @ None => *slot = Some(g),
            Some(acc) => {
                let summed = zip_map(acc, &g, |a, b| a + b);
                *acc = summed;
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::from_parts(a.shape(), data)
}

/// Per-channel 3x3 correlation with replicated borders. Replication keeps
/// the kernel's zero tap sum effective at the edges, and taps are taken
/// relative to the centre pixel, so constant images produce an exactly
/// zero response everywhere (the kernel's own tap sum is zero).
fn sobel_filter(x: &Tensor, k: &[f64; 9]) -> Tensor {
    let s = x.shape();
    let (h, w) = (s.height as isize, s.width as isize);
    let mut data = vec![0.0; s.numel()];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = x.plane(b, c);
            let dst_off = (b * s.channels + c) * (s.height * s.width);
            for y in 0..h {
                for xx in 0..w {
                    let centre = src[(y * w + xx) as usize];
                    let mut acc = 0.0;
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let iy = (y + ky - 1).clamp(0, h - 1);
                            let ix = (xx + kx - 1).clamp(0, w - 1);
                            acc += k[(ky * 3 + kx) as usize]
                                * (src[(iy * w + ix) as usize] - centre);
                        }
                    }
                    data[dst_off + (y * w + xx) as usize] = acc;
                }
            }
        }
    }
    Tensor::from_parts(s, data)
}

/// Exact adjoint of [`sobel_filter`]: scatters each output tap back onto
/// the (clamped) source pixel it read.
fn sobel_adjoint(g: &Tensor, k: &[f64; 9]) -> Tensor {
    let s = g.shape();
    let (h, w) = (s.height as isize, s.width as isize);
    let mut data = vec![0.0; s.numel()];
    for b in 0..s.batch {
        for c in 0..s.channels {
            let src = g.plane(b, c);
            let dst = &mut data
                [(b * s.channels + c) * (s.height * s.width)..][..s.height * s.width];
            for y in 0..h {
                for xx in 0..w {
                    let gv = src[(y * w + xx) as usize];
                    for ky in 0..3isize {
                        for kx in 0..3isize {
                            let iy = (y + ky - 1).clamp(0, h - 1);
                            let ix = (xx + kx - 1).clamp(0, w - 1);
                            dst[(iy * w + ix) as usize] += k[(ky * 3 + kx) as usize] * gv;
                        }
                    }
                }
            }
        }
    }
    Tensor::from_parts(s, data)
}

fn slice_channels_data(src: &Tensor, start: usize, len: usize) -> Tensor {
    let s = src.shape();
    let hw = s.height * s.width;
    let out_shape = Shape::new(s.batch, len, s.height, s.width);
    let mut data = vec![0.0; out_shape.numel()];
    for b in 0..s.batch {
        let src_off = (b * s.channels + start) * hw;
        data[b * len * hw..(b + 1) * len * hw]
            .copy_from_slice(&src.data()[src_off..src_off + len * hw]);
    }
    Tensor::from_parts(out_shape, data)
}

fn unslice_channels_data(g: &Tensor, full: Shape, start: usize, len: usize) -> Tensor {
    let hw = full.height * full.width;
    let mut data = vec![0.0; full.numel()];
    for b in 0..full.batch {
        let dst_off = (b * full.channels + start) * hw;
        data[dst_off..dst_off + len * hw]
            .copy_from_slice(&g.data()[b * len * hw..(b + 1) * len * hw]);
    }
    Tensor::from_parts(full, data)
}
