use crate::error::{Error, Result};

use super::conv::{conv3d_forward, conv3d_input_grad, conv3d_kernel_grad, conv3d_kernel_grad_cols, gemm};
use super::ops::Activation;
use super::Tensor;

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation defined outside the tensor module.
///
/// `backward` receives the input values, the forward output and the
/// gradient flowing into the output; it returns one optional gradient per
/// input, in the order the inputs were recorded.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>>;
}

pub(crate) enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    /// `col` holds the unfolded input when the kernel needs a gradient.
    Conv3d {
        x: Var,
        k: Var,
        stride: usize,
        col: Vec<f64>,
    },
    ConvTranspose3d {
        x: Var,
        k: Var,
        stride: usize,
    },
    ChannelBias {
        x: Var,
        b: Var,
    },
    Act {
        x: Var,
        act: Activation,
    },
    Scale {
        x: Var,
        c: f64,
    },
    ScaleBy {
        x: Var,
        s: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    ConcatCols {
        parts: Vec<Var>,
    },
    MaxOverPoints {
        x: Var,
        argmax: Vec<usize>,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    Reshape {
        x: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Conv3d { .. } => "conv3d",
            Op::ConvTranspose3d { .. } => "conv3d_transposed",
            Op::ChannelBias { .. } => "channel_bias",
            Op::Act { act, .. } => act.name(),
            Op::Scale { .. } => "scale",
            Op::ScaleBy { .. } => "scale_by",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::Concat { .. } => "concat",
            Op::ConcatCols { .. } => "concat_cols",
            Op::MaxOverPoints { .. } => "max_over_points",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Reshape { .. } => "reshape",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Custom { op, .. } => op.name(),
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::Conv3d { x, k, .. } | Op::ConvTranspose3d { x, k, .. } => vec![*x, *k],
            Op::ChannelBias { x, b } => vec![*x, *b],
            Op::Act { x, .. }
            | Op::Scale { x, .. }
            | Op::MaxOverPoints { x, .. }
            | Op::Sum { x }
            | Op::Mean { x }
            | Op::Reshape { x } => vec![*x],
            Op::ScaleBy { x, s } => vec![*x, *s],
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::Concat { parts } | Op::ConcatCols { parts } => parts.clone(),
            Op::SoftmaxCrossEntropy { logits, .. } => vec![*logits],
            Op::Custom { inputs, .. } => inputs.clone(),
        }
    }
}

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) op: Op,
    pub(crate) requires_grad: bool,
}

/// Operation tape. Nodes are appended in execution order, so every node's
/// inputs precede it.
#[derive(Default)]
pub struct Graph {
    pub(crate) nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; zeros when `v` required a
    /// gradient but the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        match &self.grads[v.0] {
            Some(g) => Some(g.clone()),
            None => Some(Tensor::zeros(&self.shapes[v.0])),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    fn push_unchecked(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    /// Records an externally defined differentiable operation.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Result<Var> {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Reverse pass from a scalar loss. Consumes the graph.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        if !loss_value.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        let shapes: Vec<Vec<usize>> = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(loss_value.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let contributions = self.node_backward(node, &g)?;
            for (input, grad) in contributions {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                if !grad.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", node.op.name())));
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        // Intermediate gradients are dropped; only leaves stay meaningful.
        for (i, n) in self.nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) && i != loss.0 {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }

    fn val(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn node_backward(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.val(*x);
                let wv = self.val(*w);
                let (bsz, i) = (xv.shape()[0], xv.shape()[1]);
                let o = wv.shape()[1];
                if self.needs(*x) {
                    let mut gx = vec![0.0; bsz * i];
                    gemm(bsz, o, i, g.data(), false, wv.data(), true, &mut gx, 0.0);
                    out.push((*x, Tensor::new(vec![bsz, i], gx)?));
                }
                if self.needs(*w) {
                    let mut gw = vec![0.0; i * o];
                    gemm(i, bsz, o, xv.data(), true, g.data(), false, &mut gw, 0.0);
                    out.push((*w, Tensor::new(vec![i, o], gw)?));
                }
                if let Some(b) = b {
                    if self.needs(*b) {
                        let mut gb = vec![0.0; o];
                        for row in g.data().chunks_exact(o) {
                            for (acc, v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        out.push((*b, Tensor::new(vec![o], gb)?));
                    }
                }
            }
            Op::Conv3d { x, k, stride, col } => {
                let xv = self.val(*x);
                let kv = self.val(*k);
                if self.needs(*x) {
                    out.push((*x, conv3d_input_grad(g, kv, *stride, xv.shape()[1])));
                }
                if self.needs(*k) {
                    out.push((*k, conv3d_kernel_grad_cols(col, g, kv.shape()[0], kv.shape()[1])));
                }
            }
            Op::ConvTranspose3d { x, k, stride } => {
                let xv = self.val(*x);
                let kv = self.val(*k);
                if self.needs(*x) {
                    out.push((*x, conv3d_forward(g, kv, *stride)?));
                }
                if self.needs(*k) {
                    // forward is col2im(K^T x); so dK = x * col(g)^T
                    out.push((*k, conv3d_kernel_grad(g, xv, *stride, kv.shape()[0])));
                }
            }
            Op::ChannelBias { x, b } => {
                if self.needs(*x) {
                    out.push((*x, g.clone()));
                }
                if self.needs(*b) {
                    let c = self.val(*b).numel();
                    let per = g.numel() / c;
                    let gb: Vec<f64> = g.data().chunks_exact(per).map(|ch| ch.iter().sum()).collect();
                    out.push((*b, Tensor::new(vec![c], gb)?));
                }
            }
            Op::Act { x, act } => {
                let y = &node.value;
                let data = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .zip(self.val(*x).data())
                    .map(|((gi, yi), xi)| gi * act.derivative(*xi, *yi))
                    .collect();
                out.push((*x, Tensor::new(g.shape().to_vec(), data)?));
            }
            Op::Scale { x, c } => {
                let data = g.data().iter().map(|v| v * c).collect();
                out.push((*x, Tensor::new(g.shape().to_vec(), data)?));
            }
            Op::ScaleBy { x, s } => {
                let sv = self.val(*s).item();
                if self.needs(*x) {
                    let data = g.data().iter().map(|v| v * sv).collect();
                    out.push((*x, Tensor::new(g.shape().to_vec(), data)?));
                }
                if self.needs(*s) {
                    let gs = g.dot(self.val(*x));
                    out.push((*s, Tensor::new(self.val(*s).shape().to_vec(), vec![gs])?));
                }
            }
            Op::Add { a, b } => {
                out.push((*a, g.clone()));
                out.push((*b, g.clone()));
            }
            Op::Mul { a, b } => {
                let av = self.val(*a);
                let bv = self.val(*b);
                if self.needs(*a) {
                    let d = g.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    out.push((*a, Tensor::new(g.shape().to_vec(), d)?));
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    out.push((*b, Tensor::new(g.shape().to_vec(), d)?));
                }
            }
            Op::Concat { parts } => {
                let mut offset = 0;
                for p in parts {
                    let pv = self.val(*p);
                    let n = pv.numel();
                    if self.needs(*p) {
                        let d = g.data()[offset..offset + n].to_vec();
                        out.push((*p, Tensor::new(pv.shape().to_vec(), d)?));
                    }
                    offset += n;
                }
            }
            Op::ConcatCols { parts } => {
                let rows = g.shape()[0];
                let total = g.shape()[1];
                let mut col = 0;
                for p in parts {
                    let width = self.val(*p).shape()[1];
                    if self.needs(*p) {
                        let mut d = Vec::with_capacity(rows * width);
                        for r in 0..rows {
                            d.extend_from_slice(&g.data()[r * total + col..r * total + col + width]);
                        }
                        out.push((*p, Tensor::new(vec![rows, width], d)?));
                    }
                    col += width;
                }
            }
            Op::MaxOverPoints { x, argmax } => {
                let xv = self.val(*x);
                let d = xv.shape()[1];
                let mut gx = vec![0.0; xv.numel()];
                for (c, &row) in argmax.iter().enumerate() {
                    gx[row * d + c] += g.data()[c];
                }
                out.push((*x, Tensor::new(xv.shape().to_vec(), gx)?));
            }
            Op::Sum { x } => {
                let xv = self.val(*x);
                out.push((*x, Tensor::full(xv.shape(), g.item())));
            }
            Op::Mean { x } => {
                let xv = self.val(*x);
                out.push((*x, Tensor::full(xv.shape(), g.item() / xv.numel() as f64)));
            }
            Op::Reshape { x } => {
                let shape = self.val(*x).shape().to_vec();
                out.push((*x, g.clone().reshape(&shape)?));
            }
            Op::SoftmaxCrossEntropy { logits, targets, probs } => {
                let lv = self.val(*logits);
                let c = lv.shape()[1];
                let scale = g.item() / targets.len() as f64;
                let mut gl = probs.clone();
                for (row, &t) in targets.iter().enumerate() {
                    gl[row * c + t] -= 1.0;
                }
                for v in &mut gl {
                    *v *= scale;
                }
                out.push((*logits, Tensor::new(lv.shape().to_vec(), gl)?));
            }
            Op::Custom { inputs, op } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|v| self.val(*v)).collect();
                let grads = op.backward(&vals, &node.value, g);
                for (v, gr) in inputs.iter().zip(grads) {
                    if let Some(gr) = gr {
                        out.push((*v, gr));
                    }
                }
            }
        }
        Ok(out)
    }
}
