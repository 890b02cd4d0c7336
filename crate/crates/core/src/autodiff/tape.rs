//! Reverse-mode gradient tape.
//!
//! Ops are appended in execution order; [`GradTape::backward`] walks them in
//! exact reverse order and accumulates gradients additively where a value fans
//! out to several consumers. Leaves created with [`GradTape::param`] borrow
//! their tensor, so building a graph over model weights copies nothing.

use std::borrow::Cow;

use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv1d {
        input: Var,
        weight: Var,
        bias: Var,
        dilation: usize,
        stride: usize,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu(Var),
    Add(Var, Var),
    Crop {
        input: Var,
        offset: usize,
        stride: usize,
    },
    Scale(Var, f64),
    Sum(Var),
    MpjpeLoss {
        pred: Var,
        grad: Tensor,
    },
}

#[derive(Debug)]
struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct GradTape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `var`; zeros when the root does not depend on it.
    pub fn wrt(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        self.grads[var.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

impl<'a> GradTape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf borrowing `value`.
    pub fn param(&mut self, value: &'a Tensor) -> Var {
        self.push(Cow::Borrowed(value), Op::Leaf, true)
    }

    /// Trainable leaf owning `value`.
    pub fn param_owned(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Cow::Owned(value), Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn conv1d(&mut self, input: Var, weight: Var, bias: Var, dilation: usize, stride: usize) -> Result<Var> {
        let out = tensor::conv1d_forward(self.value(input), self.value(weight), self.value(bias), dilation, stride)?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(
            Cow::Owned(out),
            Op::Conv1d {
                input,
                weight,
                bias,
                dilation,
                stride,
            },
            rg,
        ))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = tensor::linear_forward(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.needs(&[input, weight, bias]);
        Ok(self.push(Cow::Owned(out), Op::Linear { input, weight, bias }, rg))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = tensor::relu_forward(self.value(input));
        let rg = self.needs(&[input]);
        self.push(Cow::Owned(out), Op::Relu(input), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::Shape {
                op: "add",
                dim: "element count",
                expected: va.len(),
                got: vb.len(),
            });
        }
        let mut out = va.clone();
        out.add_assign(vb);
        let rg = self.needs(&[a, b]);
        Ok(self.push(Cow::Owned(out), Op::Add(a, b), rg))
    }

    pub fn crop(&mut self, input: Var, offset: usize, stride: usize, len: usize) -> Result<Var> {
        let out = tensor::crop_forward(self.value(input), offset, stride, len)?;
        let rg = self.needs(&[input]);
        Ok(self.push(Cow::Owned(out), Op::Crop { input, offset, stride }, rg))
    }

    pub fn scale(&mut self, input: Var, s: f64) -> Var {
        let mut out = self.value(input).clone();
        out.scale(s);
        let rg = self.needs(&[input]);
        self.push(Cow::Owned(out), Op::Scale(input, s), rg)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let total: f64 = self.value(input).data().iter().sum();
        let rg = self.needs(&[input]);
        self.push(Cow::Owned(Tensor::scalar(total)), Op::Sum(input), rg)
    }

    /// Mean root-aligned joint error of channel-major `pred` `[3J, n]`
    /// against `gt` `[n, J, 3]`.
    pub fn mpjpe_loss(&mut self, pred: Var, gt: &Tensor) -> Result<Var> {
        let (loss, grad) = tensor::mpjpe_loss_forward_backward(self.value(pred), gt)?;
        let rg = self.needs(&[pred]);
        Ok(self.push(Cow::Owned(Tensor::scalar(loss)), Op::MpjpeLoss { pred, grad }, rg))
    }

    /// Reverse-mode gradients of the scalar `root`, seeded with `loss_grad`.
    ///
    /// The tape is not consumed; calling this twice returns identical results.
    pub fn backward(&self, root: Var, loss_grad: f64) -> Result<Gradients> {
        let root_value = self.value(root);
        if !root_value.is_scalar() {
            return Err(Error::NonScalarRoot(root_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_value.shape(), loss_grad));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Conv1d {
                    input,
                    weight,
                    bias,
                    dilation,
                    stride,
                } => {
                    let need_x = self.nodes[input.0].requires_grad;
                    let cg = tensor::conv1d_backward(
                        self.value(*input),
                        self.value(*weight),
                        self.value(*bias),
                        *dilation,
                        *stride,
                        &g,
                        need_x,
                    )?;
                    if let Some(dx) = cg.input {
                        self.accumulate(&mut grads, *input, dx);
                    }
                    self.accumulate(&mut grads, *weight, cg.weight);
                    self.accumulate(&mut grads, *bias, cg.bias);
                }
                Op::Linear { input, weight, bias } => {
                    let need_x = self.nodes[input.0].requires_grad;
                    let lg = tensor::linear_backward(self.value(*input), self.value(*weight), &g, need_x)?;
                    if let Some(dx) = lg.input {
                        self.accumulate(&mut grads, *input, dx);
                    }
                    self.accumulate(&mut grads, *weight, lg.weight);
                    self.accumulate(&mut grads, *bias, lg.bias);
                }
                Op::Relu(input) => {
                    let dx = tensor::relu_backward(self.value(*input), &g);
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.clone());
                    self.accumulate(&mut grads, *b, g);
                }
                Op::Crop { input, offset, stride } => {
                    let dx = tensor::crop_backward(self.value(*input).shape(), *offset, *stride, &g);
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::Scale(input, s) => {
                    let mut dx = g;
                    dx.scale(*s);
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::Sum(input) => {
                    let dx = Tensor::full(self.value(*input).shape(), g.data()[0]);
                    self.accumulate(&mut grads, *input, dx);
                }
                Op::MpjpeLoss { pred, grad } => {
                    let mut dx = grad.clone();
                    dx.scale(g.data()[0]);
                    self.accumulate(&mut grads, *pred, dx);
                }
            }
        }

        // Intermediate gradients were consumed above; only leaves keep theirs.
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }
}
