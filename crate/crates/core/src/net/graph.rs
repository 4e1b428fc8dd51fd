//! Tape-based reverse-mode differentiation.
//!
//! Every backward rule is expressed with graph operations, so a backward pass
//! run with `create_graph = true` is itself recorded and can be differentiated
//! again. Shape agreement between operands is an internal invariant: callers
//! validate user-facing inputs before building a graph.

use std::sync::Arc;

use super::ops::{self, ConvGeom};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Arc<Vec<f64>>),
    Conv { x: Var, w: Var, geom: ConvGeom },
    ConvDx { gy: Var, w: Var, geom: ConvGeom },
    ConvDw { x: Var, gy: Var, geom: ConvGeom },
    AddBias(Var, Var),
    ChannelSum(Var),
    BroadcastChannel(Var),
    Leaky(Var, f64),
    LeakyMask { gy: Var, x: Var, slope: f64 },
    Upsample(Var),
    UpsampleT(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    PadChannels { x: Var, start: usize },
    Reshape(Var),
    Dense { x: Var, w: Var },
    DenseDx { gy: Var, w: Var },
    DenseDw { x: Var, gy: Var },
    Sum(Var),
    Fill(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradient nodes produced by [`Graph::backward`], indexed by the node they
/// differentiate.
#[derive(Debug, Clone)]
pub struct Gradients {
    slots: Vec<Option<Var>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<Var> {
        self.slots.get(v.0).copied().flatten()
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            recording: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = self.recording && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    fn shape_of(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape_of(a), self.shape_of(b), "operand shapes differ");
        let data = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let t = Tensor::new(self.shape_of(a), data).expect("shape");
        self.push(t, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.data(a).iter().map(|v| v * c).collect();
        let t = Tensor::new(self.shape_of(a), data).expect("shape");
        self.push(t, Op::Scale(a, c), &[a])
    }

    /// Elementwise product with a constant array (no gradient flows to `m`).
    pub fn mul_const(&mut self, a: Var, m: Arc<Vec<f64>>) -> Var {
        assert_eq!(self.data(a).len(), m.len(), "mask length differs");
        let data = self.data(a).iter().zip(m.iter()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape_of(a), data).expect("shape");
        self.push(t, Op::MulConst(a, m), &[a])
    }

    pub fn conv_raw(&mut self, x: Var, w: Var, geom: ConvGeom) -> Var {
        let y = ops::conv3d(self.data(x), self.data(w), &geom);
        let t = Tensor::new(geom.out_shape().to_vec(), y).expect("shape");
        self.push(t, Op::Conv { x, w, geom }, &[x, w])
    }

    fn conv_dx(&mut self, gy: Var, w: Var, geom: ConvGeom) -> Var {
        let gx = ops::conv3d_dx(self.data(gy), self.data(w), &geom);
        let t = Tensor::new(geom.in_shape().to_vec(), gx).expect("shape");
        self.push(t, Op::ConvDx { gy, w, geom }, &[gy, w])
    }

    fn conv_dw(&mut self, x: Var, gy: Var, geom: ConvGeom) -> Var {
        let gw = ops::conv3d_dw(self.data(x), self.data(gy), &geom);
        let t = Tensor::new(geom.kernel_shape().to_vec(), gw).expect("shape");
        self.push(t, Op::ConvDw { x, gy, geom }, &[x, gy])
    }

    /// Adds a per-channel bias `b` (shape `[C]`) to `x` (shape `[C, ...]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let shape = self.shape_of(x);
        let c = shape[0];
        assert_eq!(self.shape_of(b), vec![c], "bias shape");
        let plane = self.data(x).len() / c;
        let bd = self.data(b);
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, v)| v + bd[i / plane])
            .collect();
        let t = Tensor::new(shape, data).expect("shape");
        self.push(t, Op::AddBias(x, b), &[x, b])
    }

    fn channel_sum(&mut self, x: Var) -> Var {
        let c = self.shape_of(x)[0];
        let plane = self.data(x).len() / c;
        let data = self.data(x).chunks_exact(plane).map(|p| p.iter().sum()).collect();
        let t = Tensor::new(vec![c], data).expect("shape");
        self.push(t, Op::ChannelSum(x), &[x])
    }

    fn broadcast_channel(&mut self, b: Var, shape: Vec<usize>) -> Var {
        let c = shape[0];
        let n: usize = shape.iter().product();
        let plane = n / c;
        let bd = self.data(b);
        let data = (0..n).map(|i| bd[i / plane]).collect();
        let t = Tensor::new(shape, data).expect("shape");
        self.push(t, Op::BroadcastChannel(b), &[b])
    }

    pub fn leaky(&mut self, x: Var, slope: f64) -> Var {
        let data = self.data(x).iter().map(|&v| ops::leaky(v, slope)).collect();
        let t = Tensor::new(self.shape_of(x), data).expect("shape");
        self.push(t, Op::Leaky(x, slope), &[x])
    }

    fn leaky_mask(&mut self, gy: Var, x: Var, slope: f64) -> Var {
        let data = ops::leaky_mask_mul(self.data(gy), self.data(x), slope);
        let t = Tensor::new(self.shape_of(gy), data).expect("shape");
        self.push(t, Op::LeakyMask { gy, x, slope }, &[gy])
    }

    pub fn upsample(&mut self, x: Var) -> Var {
        let s = self.value(x).shape4().expect("4-D input");
        let (y, ys) = ops::upsample2(self.data(x), s);
        let t = Tensor::new(ys.to_vec(), y).expect("shape");
        self.push(t, Op::Upsample(x), &[x])
    }

    fn upsample_t(&mut self, gy: Var) -> Var {
        let s = self.value(gy).shape4().expect("4-D input");
        let (y, ys) = ops::upsample2_t(self.data(gy), s);
        let t = Tensor::new(ys.to_vec(), y).expect("shape");
        self.push(t, Op::UpsampleT(gy), &[gy])
    }

    /// Concatenates along the leading (channel) axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut shape = self.shape_of(parts[0]);
        let rest = shape[1..].to_vec();
        let mut c = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape_of(p);
            assert_eq!(s[1..], rest[..], "concat trailing shapes differ");
            c += s[0];
            data.extend_from_slice(self.data(p));
        }
        shape[0] = c;
        let t = Tensor::new(shape, data).expect("shape");
        self.push(t, Op::Concat(parts.to_vec()), parts)
    }

    fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let mut shape = self.shape_of(x);
        let plane: usize = shape[1..].iter().product();
        let data = self.data(x)[start * plane..(start + len) * plane].to_vec();
        shape[0] = len;
        let t = Tensor::new(shape, data).expect("shape");
        self.push(t, Op::Slice { x, start }, &[x])
    }

    fn pad_channels(&mut self, x: Var, start: usize, total: usize) -> Var {
        let mut shape = self.shape_of(x);
        let plane: usize = shape[1..].iter().product();
        let mut data = vec![0.0; total * plane];
        data[start * plane..start * plane + self.data(x).len()].copy_from_slice(self.data(x));
        shape[0] = total;
        let t = Tensor::new(shape, data).expect("shape");
        self.push(t, Op::PadChannels { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let t = Tensor::new(shape, self.data(x).to_vec()).expect("reshape size");
        self.push(t, Op::Reshape(x), &[x])
    }

    /// `W x` with `W` of shape `[out, in]` and `x` of shape `[in]`.
    pub fn dense_raw(&mut self, x: Var, w: Var) -> Var {
        let ws = self.shape_of(w);
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[1], self.data(x).len(), "dense input width");
        let y = ops::dense(self.data(x), self.data(w), ws[0]);
        let t = Tensor::new(vec![ws[0]], y).expect("shape");
        self.push(t, Op::Dense { x, w }, &[x, w])
    }

    fn dense_dx(&mut self, gy: Var, w: Var) -> Var {
        let n_in = self.shape_of(w)[1];
        let gx = ops::dense_dx(self.data(gy), self.data(w), n_in);
        let t = Tensor::new(vec![n_in], gx).expect("shape");
        self.push(t, Op::DenseDx { gy, w }, &[gy, w])
    }

    fn dense_dw(&mut self, x: Var, gy: Var) -> Var {
        let gw = ops::dense_dw(self.data(x), self.data(gy));
        let t = Tensor::new(vec![self.data(gy).len(), self.data(x).len()], gw).expect("shape");
        self.push(t, Op::DenseDw { x, gy }, &[x, gy])
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.data(x).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Broadcasts a `[1]` tensor to `shape`.
    fn fill(&mut self, s: Var, shape: Vec<usize>) -> Var {
        let v = self.data(s)[0];
        let n = shape.iter().product();
        let t = Tensor::new(shape, vec![v; n]).expect("shape");
        self.push(t, Op::Fill(s), &[s])
    }

    /// Convolution with bias, zero padding `k/2`.
    pub fn conv(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Var {
        let xs = self.value(x).shape4().expect("4-D input");
        let ws = self.shape_of(w);
        assert_eq!(ws.len(), 5, "kernel rank");
        assert_eq!(ws[1], xs[0], "kernel input channels");
        let geom = ConvGeom {
            cin: xs[0],
            cout: ws[0],
            k: ws[2],
            stride,
            pad: ws[2] / 2,
            in_spatial: [xs[1], xs[2], xs[3]],
        };
        let y = self.conv_raw(x, w, geom);
        self.add_bias(y, b)
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Var {
        let y = self.dense_raw(x, w);
        self.add(y, b)
    }

    /// Reverse pass from `seeds` (node, upstream gradient) pairs.
    ///
    /// With `create_graph` the gradient computation is recorded with
    /// gradient tracking so it can be differentiated again.
    pub fn backward(&mut self, seeds: &[(Var, Tensor)], create_graph: bool) -> Result<Gradients> {
        let n = self.nodes.len();
        for (v, t) in seeds {
            if v.0 >= n {
                return Err(Error::Graph(format!("node {} not recorded", v.0)));
            }
            if t.shape() != self.nodes[v.0].value.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "seed shape {:?} vs node shape {:?}",
                    t.shape(),
                    self.nodes[v.0].value.shape()
                )));
            }
        }
        let prev = self.recording;
        self.recording = create_graph;
        let mut grads: Vec<Option<Var>> = vec![None; n];
        let max_seed = seeds.iter().map(|(v, _)| v.0).max();
        for (v, t) in seeds {
            let s = self.constant(t.clone());
            self.accumulate(&mut grads, *v, s);
        }
        if let Some(top) = max_seed {
            for i in (0..=top).rev() {
                let Some(g) = grads[i] else { continue };
                if !self.nodes[i].requires_grad {
                    continue;
                }
                let op = self.nodes[i].op.clone();
                self.propagate(&mut grads, op, g);
            }
        }
        self.recording = prev;
        Ok(Gradients { slots: grads })
    }

    fn accumulate(&mut self, grads: &mut [Option<Var>], v: Var, g: Var) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        grads[v.0] = Some(match grads[v.0] {
            Some(prev) => self.add(prev, g),
            None => g,
        });
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&mut self, grads: &mut [Option<Var>], op: Op, g: Var) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, a, g);
                self.accumulate(grads, b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, g);
                if self.needs(b) {
                    let nb = self.scale(g, -1.0);
                    self.accumulate(grads, b, nb);
                }
            }
            Op::Scale(a, c) => {
                let ga = self.scale(g, c);
                self.accumulate(grads, a, ga);
            }
            Op::MulConst(a, m) => {
                let ga = self.mul_const(g, m);
                self.accumulate(grads, a, ga);
            }
            Op::Conv { x, w, geom } => {
                if self.needs(x) {
                    let gx = self.conv_dx(g, w, geom);
                    self.accumulate(grads, x, gx);
                }
                if self.needs(w) {
                    let gw = self.conv_dw(x, g, geom);
                    self.accumulate(grads, w, gw);
                }
            }
            Op::ConvDx { gy, w, geom } => {
                if self.needs(gy) {
                    let ggy = self.conv_raw(g, w, geom);
                    self.accumulate(grads, gy, ggy);
                }
                if self.needs(w) {
                    let gw = self.conv_dw(g, gy, geom);
                    self.accumulate(grads, w, gw);
                }
            }
            Op::ConvDw { x, gy, geom } => {
                if self.needs(x) {
                    let gx = self.conv_dx(gy, g, geom);
                    self.accumulate(grads, x, gx);
                }
                if self.needs(gy) {
                    let ggy = self.conv_raw(x, g, geom);
                    self.accumulate(grads, gy, ggy);
                }
            }
            Op::AddBias(x, b) => {
                self.accumulate(grads, x, g);
                if self.needs(b) {
                    let gb = self.channel_sum(g);
                    self.accumulate(grads, b, gb);
                }
            }
            Op::ChannelSum(x) => {
                let shape = self.shape_of(x);
                let gx = self.broadcast_channel(g, shape);
                self.accumulate(grads, x, gx);
            }
            Op::BroadcastChannel(b) => {
                let gb = self.channel_sum(g);
                self.accumulate(grads, b, gb);
            }
            Op::Leaky(x, slope) => {
                let gx = self.leaky_mask(g, x, slope);
                self.accumulate(grads, x, gx);
            }
            // The slope pattern is locally constant in x, so only gy receives gradient.
            Op::LeakyMask { gy, x, slope } => {
                let ggy = self.leaky_mask(g, x, slope);
                self.accumulate(grads, gy, ggy);
            }
            Op::Upsample(x) => {
                let gx = self.upsample_t(g);
                self.accumulate(grads, x, gx);
            }
            Op::UpsampleT(x) => {
                let gx = self.upsample(g);
                self.accumulate(grads, x, gx);
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for p in parts {
                    let len = self.shape_of(p)[0];
                    if self.needs(p) {
                        let gp = self.slice(g, start, len);
                        self.accumulate(grads, p, gp);
                    }
                    start += len;
                }
            }
            Op::Slice { x, start } => {
                let total = self.shape_of(x)[0];
                let gx = self.pad_channels(g, start, total);
                self.accumulate(grads, x, gx);
            }
            Op::PadChannels { x, start } => {
                let len = self.shape_of(x)[0];
                let gx = self.slice(g, start, len);
                self.accumulate(grads, x, gx);
            }
            Op::Reshape(x) => {
                let shape = self.shape_of(x);
                let gx = self.reshape(g, shape);
                self.accumulate(grads, x, gx);
            }
            Op::Dense { x, w } => {
                if self.needs(x) {
                    let gx = self.dense_dx(g, w);
                    self.accumulate(grads, x, gx);
                }
                if self.needs(w) {
                    let gw = self.dense_dw(x, g);
                    self.accumulate(grads, w, gw);
                }
            }
            Op::DenseDx { gy, w } => {
                if self.needs(gy) {
                    let ggy = self.dense_raw(g, w);
                    self.accumulate(grads, gy, ggy);
                }
                if self.needs(w) {
                    let gw = self.dense_dw(g, gy);
                    self.accumulate(grads, w, gw);
                }
            }
            Op::DenseDw { x, gy } => {
                if self.needs(x) {
                    let gx = self.dense_dx(gy, g);
                    self.accumulate(grads, x, gx);
                }
                if self.needs(gy) {
                    let ggy = self.dense_raw(x, g);
                    self.accumulate(grads, gy, ggy);
                }
            }
            Op::Sum(x) => {
                let shape = self.shape_of(x);
                let gx = self.fill(g, shape);
                self.accumulate(grads, x, gx);
            }
            Op::Fill(s) => {
                let gs = self.sum(g);
                self.accumulate(grads, s, gs);
            }
        }
    }
}
