//! Reverse-mode automatic differentiation over a dynamically recorded tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation appends a
//! node holding its output value and whatever it needs for the backward
//! rule; inputs always have smaller handles than the node consuming them, so
//! a reverse sweep over the node list is a valid topological order.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, relative_error, CoordFailure, GradCheckReport, REL_ERR_FLOOR};

use crate::error::{Error, Result};
use crate::nn::{self, ConvDims, ConvSpec, TransposedDims};
use crate::tensor::{inverse_permutation, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Binary(BinaryKind, Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MatMul(Var, Var),
    Softmax(Var),
    Reduce {
        kind: ReduceKind,
        input: Var,
        axis: Option<usize>,
        // Max only: flat input index chosen for every output element.
        argmax: Vec<usize>,
    },
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Window {
        input: Var,
        top: isize,
        left: isize,
    },
    Conv {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        spec: ConvSpec,
    },
    ConvTranspose {
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        // Per-pixel d(loss)/d(logits), already divided by the scored-pixel count.
        dlogits: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node handle.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (parameter or checked input).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// An input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Moves a node's value out of the graph, leaving an empty tensor behind.
    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::zeros(&[0]))
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    pub(crate) fn push_conv(&mut self, t: Tensor, x: Var, weight: Var, bias: Option<Var>, spec: ConvSpec) -> Var {
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push_op(t, Op::Conv { x, weight, bias, spec }, &inputs)
    }

    pub(crate) fn push_conv_transpose(
        &mut self,
        t: Tensor,
        x: Var,
        weight: Var,
        bias: Option<Var>,
        stride: (usize, usize),
    ) -> Var {
        let mut inputs = vec![x, weight];
        inputs.extend(bias);
        self.push_op(t, Op::ConvTranspose { x, weight, bias, stride }, &inputs)
    }

    pub(crate) fn push_maxpool(&mut self, t: Tensor, x: Var, argmax: Vec<usize>) -> Var {
        self.push_op(t, Op::MaxPool { x, argmax }, &[x])
    }

    /// Reverse sweep from a one-element `loss` node, seeded with 1.0.
    /// Every node reachable from `loss` that requires a gradient gets one.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().into()));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(gout) = grads[id].take() else {
                continue;
            };
            self.backprop_node(node, &gout, &mut grads);
            grads[id] = Some(gout);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => self.backprop_binary(*kind, *a, *b, gout, grads),
            Op::Scale(a, s) => self.accumulate(grads, *a, gout.map(|g| g * s)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut g = Tensor::from_fn(x.shape(), |i| if x.data()[i] > 0.0 { gout.data()[i] } else { 0.0 });
                if crate::fault::relu_backward_corrupted() {
                    g = g.map(|v| v * 0.5);
                }
                self.accumulate(grads, *a, g);
            }
            Op::MatMul(a, b) => {
                let (ga, gb) = ops::matmul_backward(self.value(*a), self.value(*b), gout, self.wants(*a), self.wants(*b));
                if let Some(ga) = ga {
                    self.accumulate(grads, *a, ga);
                }
                if let Some(gb) = gb {
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Softmax(a) => self.accumulate(grads, *a, ops::softmax_backward(&node.value, gout)),
            Op::Reduce {
                kind,
                input,
                axis,
                argmax,
            } => {
                let g = ops::reduce_backward(*kind, self.value(*input).shape(), *axis, argmax, gout);
                self.accumulate(grads, *input, g);
            }
            Op::Reshape(a) => {
                let g = gout.reshape(self.value(*a).shape()).expect("reshape backward");
                self.accumulate(grads, *a, g);
            }
            Op::Permute(a, perm) => {
                let g = gout.permute(&inverse_permutation(perm)).expect("permute backward");
                self.accumulate(grads, *a, g);
            }
            Op::Concat { inputs, axis } => {
                let shapes: Vec<&[usize]> = inputs.iter().map(|v| self.value(*v).shape()).collect();
                for (v, g) in inputs.iter().zip(ops::concat_backward(&shapes, *axis, gout)) {
                    self.accumulate(grads, *v, g);
                }
            }
            Op::Window { input, top, left } => {
                let g = ops::window(gout, self.value(*input).shape()[2], self.value(*input).shape()[3], -top, -left);
                self.accumulate(grads, *input, g);
            }
            Op::Conv { x, weight, bias, spec } => {
                let xt = self.value(*x);
                let wt = self.value(*weight);
                let dims = ConvDims::for_conv(xt.shape(), wt.shape(), spec).expect("conv backward dims");
                let need = (self.wants(*x), self.wants(*weight), bias.map(|b| self.wants(b)).unwrap_or(false));
                let cg = nn::conv2d_backward(xt.data(), wt.data(), gout.data(), &dims, spec, need);
                self.scatter_conv_grads(grads, *x, *weight, *bias, cg);
            }
            Op::ConvTranspose { x, weight, bias, stride } => {
                let xt = self.value(*x);
                let wt = self.value(*weight);
                let dims = TransposedDims::new(xt.shape(), wt.shape(), *stride).expect("transposed backward dims");
                let need = (self.wants(*x), self.wants(*weight), bias.map(|b| self.wants(b)).unwrap_or(false));
                let cg = nn::conv_transpose2d_backward(xt.data(), wt.data(), gout.data(), &dims, need);
                self.scatter_conv_grads(grads, *x, *weight, *bias, cg);
            }
            Op::MaxPool { x, argmax } => {
                let mut g = Tensor::zeros(self.value(*x).shape());
                let gd = g.data_mut();
                for (&src, &go) in argmax.iter().zip(gout.data()) {
                    gd[src] += go;
                }
                self.accumulate(grads, *x, g);
            }
            Op::SoftmaxCrossEntropy { logits, dlogits } => {
                let s = gout.item();
                self.accumulate(grads, *logits, dlogits.map(|v| v * s));
            }
        }
    }

    fn scatter_conv_grads(
        &self,
        grads: &mut [Option<Tensor>],
        x: Var,
        weight: Var,
        bias: Option<Var>,
        cg: nn::ConvGrads,
    ) {
        if let Some(dx) = cg.dx {
            let t = Tensor::new(self.value(x).shape(), dx).expect("dx shape");
            self.accumulate(grads, x, t);
        }
        if let Some(dw) = cg.dw {
            let t = Tensor::new(self.value(weight).shape(), dw).expect("dw shape");
            self.accumulate(grads, weight, t);
        }
        if let (Some(b), Some(db)) = (bias, cg.db) {
            let t = Tensor::new(self.value(b).shape(), db).expect("db shape");
            self.accumulate(grads, b, t);
        }
    }

    fn backprop_binary(&self, kind: BinaryKind, a: Var, b: Var, gout: &Tensor, grads: &mut [Option<Tensor>]) {
        let av = self.value(a);
        let bv = self.value(b);
        // Partial derivative of the output w.r.t. each operand, elementwise
        // over the output.
        let da: Tensor = match kind {
            BinaryKind::Add | BinaryKind::Sub => gout.clone(),
            BinaryKind::Mul => Tensor::from_fn(gout.shape(), |i| gout.data()[i] * pick(bv, i)),
        };
        let db: Tensor = match kind {
            BinaryKind::Add => gout.clone(),
            BinaryKind::Sub => gout.map(|g| -g),
            BinaryKind::Mul => Tensor::from_fn(gout.shape(), |i| gout.data()[i] * pick(av, i)),
        };
        if self.wants(a) {
            self.accumulate(grads, a, reduce_to(da, av.shape()));
        }
        if self.wants(b) {
            self.accumulate(grads, b, reduce_to(db, bv.shape()));
        }
    }
}

/// Element `i` of an operand that is either full-size or a broadcast scalar.
fn pick(t: &Tensor, i: usize) -> f64 {
    if t.numel() == 1 {
        t.data()[0]
    } else {
        t.data()[i]
    }
}

/// Sums a full-size gradient down to a broadcast scalar operand's shape.
fn reduce_to(g: Tensor, shape: &[usize]) -> Tensor {
    if g.shape() == shape {
        g
    } else {
        Tensor::full(shape, g.sum())
    }
}
