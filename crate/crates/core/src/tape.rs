//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! Every operation applied through a [`Tape`] computes its value eagerly and
//! appends a node recording its inputs plus whatever the backward rule
//! needs. [`Tape::backward`] walks the nodes in reverse execution order once,
//! summing the contributions each node receives from its consumers.
//!
//! ```
//! use agmh_core::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::from_vec(vec![1.0, -2.0]));
//! let y = tape.inner_product(x, x).unwrap();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0]);
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Reshape(NodeId),
    Conv1x1 { x: NodeId, weight: NodeId, bias: NodeId },
    Softmax { x: NodeId, axis: usize },
    L1Normalize { x: NodeId, axis: usize, sums: Vec<Option<f64>> },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    MeanSpatial(NodeId),
    MaxChannel { x: NodeId, argmax: Vec<usize> },
    SumAll(NodeId),
    InnerProduct(NodeId, NodeId),
    Concat { parts: Vec<NodeId>, axis: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node that required them.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the node does not influence the differentiated scalar or
    /// does not require gradients.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros shaped like `like` when there is none.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant during differentiation.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op, inputs: &[NodeId]) -> NodeId {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.derived(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let v = tensor::transpose(self.value(a))?;
        Ok(self.derived(v, Op::Transpose(a), &[a]))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.derived(v, Op::Reshape(a), &[a]))
    }

    pub fn conv1x1(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = tensor::conv1x1(self.value(x), self.value(weight), self.value(bias))?;
        Ok(self.derived(v, Op::Conv1x1 { x, weight, bias }, &[x, weight, bias]))
    }

    pub fn softmax_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let v = tensor::softmax_axis(self.value(x), axis)?;
        Ok(self.derived(v, Op::Softmax { x, axis }, &[x]))
    }

    pub fn l1_normalize_axis(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        let (v, sums) = tensor::l1_normalize_with_sums(self.value(x), axis)?;
        Ok(self.derived(v, Op::L1Normalize { x, axis, sums }, &[x]))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.derived(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.derived(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = tensor::scale(self.value(a), factor);
        self.derived(v, Op::Scale(a, factor), &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = tensor::relu(self.value(a));
        self.derived(v, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = tensor::tanh(self.value(a));
        self.derived(v, Op::Tanh(a), &[a])
    }

    pub fn mean_spatial(&mut self, x: NodeId) -> Result<NodeId> {
        let v = tensor::mean_spatial(self.value(x))?;
        Ok(self.derived(v, Op::MeanSpatial(x), &[x]))
    }

    pub fn max_channel(&mut self, x: NodeId) -> Result<NodeId> {
        let (v, argmax) = tensor::max_channel(self.value(x))?;
        Ok(self.derived(v, Op::MaxChannel { x, argmax }, &[x]))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(tensor::sum_all(self.value(x)));
        self.derived(v, Op::SumAll(x), &[x])
    }

    pub fn inner_product(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(tensor::inner_product(self.value(a), self.value(b))?);
        Ok(self.derived(v, Op::InnerProduct(a, b), &[a, b]))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        let values: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat(&values, axis)?;
        Ok(self.derived(
            v,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            parts,
        ))
    }

    /// Sum of scalar nodes, accumulated left to right.
    pub fn sum_scalars(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| Error::argument("sum of an empty list"))?;
        rest.iter().try_fold(first, |acc, &t| self.add(acc, t))
    }

    /// Differentiates the one-element node `loss` with respect to every node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::argument("backward requires a scalar output"));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, contrib: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(acc) => acc.add_assign(&contrib),
            slot => *slot = Some(contrib),
        }
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.wants(a) {
                    let bt = tensor::transpose(self.value(b))?;
                    self.accumulate(grads, a, tensor::matmul(g, &bt)?);
                }
                if self.wants(b) {
                    let at = tensor::transpose(self.value(a))?;
                    self.accumulate(grads, b, tensor::matmul(&at, g)?);
                }
            }
            &Op::Transpose(a) => self.accumulate(grads, a, tensor::transpose(g)?),
            &Op::Reshape(a) => {
                let shape = self.value(a).shape().to_vec();
                self.accumulate(grads, a, g.reshape(&shape)?);
            }
            &Op::Conv1x1 { x, weight, bias } => {
                let xv = self.value(x);
                let [cin, h, w] = *xv.shape() else { unreachable!() };
                let n = h * w;
                let cout = g.shape()[0];
                let g2 = g.reshape(&[cout, n])?;
                if self.wants(x) {
                    let wt = tensor::transpose(self.value(weight))?;
                    let dx = tensor::matmul(&wt, &g2)?;
                    self.accumulate(grads, x, dx.reshape(&[cin, h, w])?);
                }
                if self.wants(weight) {
                    let xt = tensor::transpose(&xv.reshape(&[cin, n])?)?;
                    self.accumulate(grads, weight, tensor::matmul(&g2, &xt)?);
                }
                if self.wants(bias) {
                    let db = g.data().chunks_exact(n).map(|p| p.iter().sum()).collect();
                    self.accumulate(grads, bias, Tensor::from_vec(db));
                }
            }
            &Op::Softmax { x, axis } => {
                let y = &node.value;
                let (outer, len, inner) = tensor::axis_split(y.shape(), axis)?;
                let mut dx = Tensor::zeros(y.shape());
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g.data()[at(j)] * y.data()[at(j)]).sum();
                        for j in 0..len {
                            dx.data_mut()[at(j)] = y.data()[at(j)] * (g.data()[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, x, dx);
            }
            Op::L1Normalize { x, axis, sums } => {
                let y = &node.value;
                let (outer, len, inner) = tensor::axis_split(y.shape(), *axis)?;
                let mut dx = Tensor::zeros(y.shape());
                for o in 0..outer {
                    for i in 0..inner {
                        let Some(sum) = sums[o * inner + i] else { continue };
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g.data()[at(j)] * y.data()[at(j)]).sum();
                        for j in 0..len {
                            dx.data_mut()[at(j)] = (g.data()[at(j)] - dot) / sum;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, tensor::scale(g, -1.0));
            }
            &Op::Scale(a, factor) => self.accumulate(grads, a, tensor::scale(g, factor)),
            &Op::Relu(a) => {
                let mut dx = g.clone();
                for (d, &v) in dx.data_mut().iter_mut().zip(self.value(a).data()) {
                    if v <= 0.0 {
                        *d = 0.0;
                    }
                }
                self.accumulate(grads, a, dx);
            }
            &Op::Tanh(a) => {
                let mut dx = g.clone();
                for (d, &y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                    *d *= 1.0 - y * y;
                }
                self.accumulate(grads, a, dx);
            }
            &Op::MeanSpatial(x) => {
                let shape = self.value(x).shape();
                let n = shape[1] * shape[2];
                let mut dx = Vec::with_capacity(shape.iter().product());
                for &gc in g.data() {
                    dx.extend(core::iter::repeat_n(gc / n as f64, n));
                }
                self.accumulate(grads, x, Tensor::new(shape, dx)?);
            }
            Op::MaxChannel { x, argmax } => {
                let shape = self.value(*x).shape();
                let n = shape[1] * shape[2];
                let mut dx = Tensor::zeros(shape);
                for (p, &ch) in argmax.iter().enumerate() {
                    dx.data_mut()[ch * n + p] = g.data()[p];
                }
                self.accumulate(grads, *x, dx);
            }
            &Op::SumAll(x) => {
                let shape = self.value(x).shape();
                self.accumulate(grads, x, Tensor::full(shape, g.data()[0]));
            }
            &Op::InnerProduct(a, b) => {
                let s = g.data()[0];
                if self.wants(a) {
                    self.accumulate(grads, a, tensor::scale(self.value(b), s));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, tensor::scale(self.value(a), s));
                }
            }
            Op::Concat { parts, axis } => {
                let extents: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[*axis]).collect();
                for (&p, piece) in parts.iter().zip(tensor::split(g, *axis, &extents)?) {
                    self.accumulate(grads, p, piece);
                }
            }
        }
        Ok(())
    }
}
