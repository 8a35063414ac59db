use crate::error::{Error, Result};

use super::conv::{conv3d_forward_cols, conv3d_transposed_forward, gemm};
use super::graph::{Graph, Op, Var};
use super::Tensor;

/// Elementwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
        }
    }

    /// Derivative given the input `x` and the output `y`.
    pub(crate) fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    pub(crate) fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }
}

impl Graph {
    /// `x[B,I] * w[I,O] + b[O]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::dim("linear", format!("x {xs:?} vs w {ws:?}")));
        }
        let (bsz, i, o) = (xs[0], xs[1], ws[1]);
        let mut out = vec![0.0; bsz * o];
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [o] {
                return Err(Error::dim("linear", format!("bias {:?} vs {o} outputs", bv.shape())));
            }
            for row in out.chunks_exact_mut(o) {
                row.copy_from_slice(bv.data());
            }
        }
        gemm(
            bsz,
            i,
            o,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            &mut out,
            if b.is_some() { 1.0 } else { 0.0 },
        );
        self.push(Tensor::new(vec![bsz, o], out)?, Op::Linear { x, w, b })
    }

    pub fn conv3d(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let (y, col) = conv3d_forward_cols(self.value(x), self.value(k), stride)?;
        let col = if self.requires_grad(k) { col } else { Vec::new() };
        self.push(y, Op::Conv3d { x, k, stride, col })
    }

    /// Transposed (adjoint) convolution; `k` has the layout of the forward
    /// kernel `[C_out, C_in, 3, 3, 3]` and maps `C_out` channels to `C_in`.
    pub fn conv3d_transposed(&mut self, x: Var, k: Var, stride: usize) -> Result<Var> {
        let y = conv3d_transposed_forward(self.value(x), self.value(k), stride)?;
        self.push(y, Op::ConvTranspose3d { x, k, stride })
    }

    /// Adds a per-channel bias `b[C]` to `x[C, ...]`.
    pub fn channel_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.shape().first().copied().unwrap_or(0);
        let bv = self.value(b);
        if bv.shape() != [c] {
            return Err(Error::dim(
                "channel_bias",
                format!("bias {:?} vs {c} channels", bv.shape()),
            ));
        }
        let per = xv.numel() / c.max(1);
        let mut data = xv.data().to_vec();
        for (ch, block) in data.chunks_exact_mut(per).enumerate() {
            let bias = bv.data()[ch];
            block.iter_mut().for_each(|v| *v += bias);
        }
        let shape = xv.shape().to_vec();
        self.push(Tensor::new(shape, data)?, Op::ChannelBias { x, b })
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| act.apply(*v)).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(t, Op::Act { x, act })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Relu)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(x, Activation::Sigmoid)
    }

    /// Multiplies by a constant.
    pub fn mul_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * c).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(t, Op::Scale { x, c })
    }

    /// Multiplies by a scalar node, differentiable in both arguments.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if !sv.is_scalar() {
            return Err(Error::dim(
                "scale_by",
                format!("scale must be scalar, got {:?}", sv.shape()),
            ));
        }
        let sv = sv.item();
        let xv = self.value(x);
        let data = xv.data().iter().map(|v| v * sv).collect();
        let t = Tensor::new(xv.shape().to_vec(), data)?;
        self.push(t, Op::ScaleBy { x, s })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::Add { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        self.push(t, Op::Mul { a, b })
    }

    /// Concatenates along the leading axis (channels for volumes).
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self
            .value(*parts.first().ok_or_else(|| Error::EmptyInput("concat".into()))?)
            .shape()
            .to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let s = self.value(*p).shape();
            if s.is_empty() || s.len() != first.len() || s[1..] != first[1..] {
                return Err(Error::dim("concat", format!("{s:?} vs {first:?}")));
            }
            lead += s[0];
            data.extend_from_slice(self.value(*p).data());
        }
        let mut shape = first;
        shape[0] = lead;
        self.push(Tensor::new(shape, data)?, Op::Concat { parts: parts.to_vec() })
    }

    /// Concatenates `[N, C_i]` matrices along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self
            .value(*parts.first().ok_or_else(|| Error::EmptyInput("concat_cols".into()))?)
            .shape()[0];
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let s = self.value(*p).shape();
            if s.len() != 2 || s[0] != rows {
                return Err(Error::dim("concat_cols", format!("{s:?} with {rows} rows")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[r * w..(r + 1) * w]);
            }
        }
        self.push(
            Tensor::new(vec![rows, total], data)?,
            Op::ConcatCols { parts: parts.to_vec() },
        )
    }

    /// Columnwise maximum of `x[N,D]`; ties resolve to the lowest row.
    pub fn max_over_points(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let s = xv.shape();
        if s.len() != 2 {
            return Err(Error::dim("max_over_points", format!("expected [N,D], got {s:?}")));
        }
        let (n, d) = (s[0], s[1]);
        if n == 0 {
            return Err(Error::EmptyInput("max_over_points needs at least one row".into()));
        }
        let mut best = xv.data()[..d].to_vec();
        let mut argmax = vec![0usize; d];
        for (row, vals) in xv.data().chunks_exact(d).enumerate().skip(1) {
            for c in 0..d {
                if vals[c] > best[c] {
                    best[c] = vals[c];
                    argmax[c] = row;
                }
            }
        }
        self.push(Tensor::new(vec![d], best)?, Op::MaxOverPoints { x, argmax })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(Error::EmptyInput("mean of empty tensor".into()));
        }
        let m = xv.sum() / xv.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean { x })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(x).clone().reshape(shape)?;
        self.push(t, Op::Reshape { x })
    }

    /// Mean softmax cross-entropy of `logits[B,C]` against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let s = lv.shape();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(Error::dim(
                "softmax_cross_entropy",
                format!("logits {s:?} vs {} targets", targets.len()),
            ));
        }
        let c = s[1];
        if let Some(t) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::contract(format!(
                "target class {t} out of range for {c} classes"
            )));
        }
        let mut probs = Vec::with_capacity(lv.numel());
        let mut loss = 0.0;
        for (row, &t) in lv.data().chunks_exact(c).zip(targets) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            loss += z.ln() + m - row[t];
            probs.extend(row.iter().map(|v| (v - m).exp() / z));
        }
        loss /= targets.len() as f64;
        self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }
}
