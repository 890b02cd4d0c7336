//! Dense row-major `f64` tensors and the raw forward/backward kernels.
//!
//! Every reduction accumulates in ascending index order of the reduced axis,
//! so results are bit-reproducible. Convolutions accumulate the input channel
//! in the outer loop and the kernel tap in the inner loop, then add the bias.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                dim: "data length",
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Vector of the given values, shape `[len]`.
    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                dim: "element count",
                expected,
                got: self.data.len(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Element `[i, j]` of a rank-2 tensor.
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn rank2(t: &Tensor, op: &'static str, dim: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::Shape {
            op,
            dim,
            expected: 2,
            got: s.len(),
        }),
    }
}

fn check(op: &'static str, dim: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            dim,
            expected,
            got,
        })
    }
}

/// Geometry of a validated 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub t_in: usize,
    pub t_out: usize,
    pub dilation: usize,
    pub stride: usize,
}

pub fn conv_geometry(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    dilation: usize,
    stride: usize,
) -> Result<ConvGeom> {
    const OP: &str = "conv1d";
    let (c_in, t_in) = rank2(input, OP, "input rank")?;
    let (c_out, w_in, kernel) = match weight.shape() {
        [a, b, c] => (*a, *b, *c),
        s => {
            return Err(Error::Shape {
                op: OP,
                dim: "weight rank",
                expected: 3,
                got: s.len(),
            })
        }
    };
    check(OP, "weight dim 1 (input channels)", c_in, w_in)?;
    check(OP, "bias rank", 1, bias.shape().len())?;
    check(OP, "bias dim 0 (output channels)", c_out, bias.len())?;
    if kernel == 0 || dilation == 0 || stride == 0 {
        return Err(invalid("conv1d: kernel, dilation and stride must be positive"));
    }
    let span = (kernel - 1) * dilation + 1;
    if t_in < span {
        return Err(Error::WindowUnderflow {
            op: OP,
            needed: span,
            got: t_in,
        });
    }
    Ok(ConvGeom {
        c_in,
        c_out,
        kernel,
        t_in,
        t_out: (t_in - span) / stride + 1,
        dilation,
        stride,
    })
}

/// Input row `c` sampled at `j * stride + offset` for `j in 0..len`.
fn gather_row(x: &[f64], t_in: usize, c: usize, offset: usize, stride: usize, len: usize) -> Vec<f64> {
    let row = &x[c * t_in..(c + 1) * t_in];
    (0..len).map(|j| row[j * stride + offset]).collect()
}

/// `out[o][j] = bias[o] + Σ_c Σ_k weight[o][c][k] · input[c][j·stride + k·dilation]`.
pub fn conv1d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    dilation: usize,
    stride: usize,
) -> Result<Tensor> {
    let g = conv_geometry(input, weight, bias, dilation, stride)?;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; g.c_out * g.t_out];

    // Pre-gather strided taps once; stride 1 reads straight from the input.
    let taps: Vec<Vec<f64>> = if g.stride == 1 {
        Vec::new()
    } else {
        (0..g.c_in)
            .flat_map(|c| (0..g.kernel).map(move |k| (c, k)))
            .map(|(c, k)| gather_row(x, g.t_in, c, k * g.dilation, g.stride, g.t_out))
            .collect()
    };

    let mut acc = vec![0.0; g.t_out];
    for o in 0..g.c_out {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for c in 0..g.c_in {
            for k in 0..g.kernel {
                let wv = w[(o * g.c_in + c) * g.kernel + k];
                let src: &[f64] = if g.stride == 1 {
                    let start = c * g.t_in + k * g.dilation;
                    &x[start..start + g.t_out]
                } else {
                    &taps[c * g.kernel + k]
                };
                for (a, xv) in acc.iter_mut().zip(src) {
                    *a += wv * xv;
                }
            }
        }
        let b = bias.data()[o];
        for (dst, a) in out[o * g.t_out..(o + 1) * g.t_out].iter_mut().zip(&acc) {
            *dst = b + a;
        }
    }
    Tensor::new(vec![g.c_out, g.t_out], out)
}

pub struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn conv1d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    dilation: usize,
    stride: usize,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = conv_geometry(input, weight, bias, dilation, stride)?;
    check("conv1d backward", "grad rows", g.c_out, grad_out.shape()[0])?;
    check("conv1d backward", "grad columns", g.t_out, grad_out.len() / g.c_out)?;
    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();
    let ck = g.c_in * g.kernel;

    // Bias: ascending time.
    let db: Vec<f64> = (0..g.c_out)
        .map(|o| go[o * g.t_out..(o + 1) * g.t_out].iter().sum())
        .collect();

    // Weight: dW[o, :] += go[o, j] · col[j, :] for ascending j, where col is
    // the im2col matrix of the input taps.
    let mut cols = vec![0.0; g.t_out * ck];
    for c in 0..g.c_in {
        let row = &x[c * g.t_in..(c + 1) * g.t_in];
        for k in 0..g.kernel {
            for j in 0..g.t_out {
                cols[j * ck + c * g.kernel + k] = row[j * g.stride + k * g.dilation];
            }
        }
    }
    let mut dw = vec![0.0; g.c_out * ck];
    for o in 0..g.c_out {
        let dst = &mut dw[o * ck..(o + 1) * ck];
        for j in 0..g.t_out {
            let gv = go[o * g.t_out + j];
            for (d, cv) in dst.iter_mut().zip(&cols[j * ck..(j + 1) * ck]) {
                *d += gv * cv;
            }
        }
    }

    // Input: dx[c, j·s + k·d] += Σ_o w[o,c,k] · go[o,j], ascending o, then k.
    let dx = if need_input_grad {
        let mut dx = vec![0.0; g.c_in * g.t_in];
        let mut tmp = vec![0.0; g.t_out];
        for c in 0..g.c_in {
            for k in 0..g.kernel {
                tmp.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..g.c_out {
                    let wv = w[(o * g.c_in + c) * g.kernel + k];
                    for (t, gv) in tmp.iter_mut().zip(&go[o * g.t_out..(o + 1) * g.t_out]) {
                        *t += wv * gv;
                    }
                }
                let row = &mut dx[c * g.t_in..(c + 1) * g.t_in];
                let offset = k * g.dilation;
                if g.stride == 1 {
                    for (d, t) in row[offset..offset + g.t_out].iter_mut().zip(&tmp) {
                        *d += t;
                    }
                } else {
                    for (j, t) in tmp.iter().enumerate() {
                        row[j * g.stride + offset] += t;
                    }
                }
            }
        }
        Some(Tensor::new(vec![g.c_in, g.t_in], dx)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: dx,
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![g.c_out], db)?,
    })
}

/// Per-column affine map: `out[o][t] = bias[o] + Σ_c weight[o][c] · input[c][t]`.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    const OP: &str = "linear";
    let (c_in, t) = rank2(input, OP, "input rank")?;
    let (c_out, w_in) = rank2(weight, OP, "weight rank")?;
    check(OP, "weight dim 1 (input channels)", c_in, w_in)?;
    check(OP, "bias length (output channels)", c_out, bias.len())?;
    let x = input.data();
    let w = weight.data();
    let mut out = vec![0.0; c_out * t];
    let mut acc = vec![0.0; t];
    for o in 0..c_out {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for c in 0..c_in {
            let wv = w[o * c_in + c];
            for (a, xv) in acc.iter_mut().zip(&x[c * t..(c + 1) * t]) {
                *a += wv * xv;
            }
        }
        let b = bias.data()[o];
        for (dst, a) in out[o * t..(o + 1) * t].iter_mut().zip(&acc) {
            *dst = b + a;
        }
    }
    Tensor::new(vec![c_out, t], out)
}

pub struct LinearGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<LinearGrads> {
    let (c_in, t) = rank2(input, "linear backward", "input rank")?;
    let (c_out, _) = rank2(weight, "linear backward", "weight rank")?;
    check("linear backward", "grad length", c_out * t, grad_out.len())?;
    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();

    let db: Vec<f64> = (0..c_out).map(|o| go[o * t..(o + 1) * t].iter().sum()).collect();

    let mut xt = vec![0.0; t * c_in];
    for c in 0..c_in {
        for j in 0..t {
            xt[j * c_in + c] = x[c * t + j];
        }
    }
    let mut dw = vec![0.0; c_out * c_in];
    for o in 0..c_out {
        let dst = &mut dw[o * c_in..(o + 1) * c_in];
        for j in 0..t {
            let gv = go[o * t + j];
            for (d, xv) in dst.iter_mut().zip(&xt[j * c_in..(j + 1) * c_in]) {
                *d += gv * xv;
            }
        }
    }

    let dx = if need_input_grad {
        let mut dx = vec![0.0; c_in * t];
        for c in 0..c_in {
            let row = &mut dx[c * t..(c + 1) * t];
            for o in 0..c_out {
                let wv = w[o * c_in + c];
                for (d, gv) in row.iter_mut().zip(&go[o * t..(o + 1) * t]) {
                    *d += wv * gv;
                }
            }
        }
        Some(Tensor::new(vec![c_in, t], dx)?)
    } else {
        None
    };

    Ok(LinearGrads {
        input: dx,
        weight: Tensor::new(weight.shape().to_vec(), dw)?,
        bias: Tensor::new(vec![c_out], db)?,
    })
}

pub fn relu_forward(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
    }
}

/// Upstream gradient masked by `input > 0`; the subgradient at exactly 0 is 0.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input
            .data
            .iter()
            .zip(&grad_out.data)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// Columns `offset + j·stride` for `j in 0..len` of a rank-2 tensor.
pub fn crop_forward(input: &Tensor, offset: usize, stride: usize, len: usize) -> Result<Tensor> {
    let (rows, t) = rank2(input, "crop", "input rank")?;
    if len == 0 || stride == 0 || offset + (len - 1) * stride >= t {
        return Err(Error::WindowUnderflow {
            op: "crop",
            needed: offset + len.saturating_sub(1) * stride + 1,
            got: t,
        });
    }
    let x = input.data();
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend((0..len).map(|j| x[r * t + offset + j * stride]));
    }
    Tensor::new(vec![rows, len], out)
}

pub fn crop_backward(input_shape: &[usize], offset: usize, stride: usize, grad_out: &Tensor) -> Tensor {
    let (rows, t) = (input_shape[0], input_shape[1]);
    let len = grad_out.shape()[1];
    let mut dx = Tensor::zeros(input_shape);
    let go = grad_out.data();
    for r in 0..rows {
        for j in 0..len {
            dx.data[r * t + offset + j * stride] += go[r * len + j];
        }
    }
    dx
}

/// Root-aligned mean per-joint distance averaged over `n` poses.
///
/// `pred` is channel-major `[3J, n]` (row `3j + axis`), `gt` is `[n, J, 3]`.
/// Returns the loss and its gradient with respect to `pred`. A joint whose
/// aligned distance is exactly 0 contributes a zero gradient.
pub fn mpjpe_loss_forward_backward(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    const OP: &str = "mpjpe loss";
    let (rows, n) = rank2(pred, OP, "pred rank")?;
    if rows % 3 != 0 || rows < 3 {
        return Err(invalid("mpjpe loss: pred rows must be 3·J"));
    }
    let joints = rows / 3;
    check(OP, "gt element count", n * joints * 3, gt.len())?;
    if n == 0 {
        return Err(invalid("mpjpe loss: empty batch"));
    }
    let p = pred.data();
    let q = gt.data();
    let mut grad = vec![0.0; rows * n];
    let mut total = 0.0;
    let scale = 1.0 / (joints as f64 * n as f64);
    for s in 0..n {
        let pr = |j: usize, a: usize| p[(3 * j + a) * n + s];
        let gr = |j: usize, a: usize| q[(s * joints + j) * 3 + a];
        let mut per_pose = 0.0;
        let mut root_grad = [0.0; 3];
        for j in 1..joints {
            let mut d = [0.0; 3];
            for a in 0..3 {
                d[a] = (pr(j, a) - pr(0, a)) - (gr(j, a) - gr(0, a));
            }
            let dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            per_pose += dist;
            if dist > 0.0 {
                for a in 0..3 {
                    let u = d[a] / dist * scale;
                    grad[(3 * j + a) * n + s] = u;
                    root_grad[a] -= u;
                }
            }
        }
        for a in 0..3 {
            grad[a * n + s] = root_grad[a];
        }
        total += per_pose / joints as f64;
    }
    Ok((total / n as f64, Tensor::new(vec![rows, n], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t2(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, v.to_vec()).unwrap()
    }

    fn w3(o: usize, c: usize, k: usize, v: &[f64]) -> Tensor {
        Tensor::new(vec![o, c, k], v.to_vec()).unwrap()
    }

    #[test]
    fn conv_hand_examples() {
        let out = conv1d_forward(
            &t2(1, 3, &[1.0, 2.0, 3.0]),
            &w3(1, 1, 3, &[1.0, 0.0, -1.0]),
            &Tensor::vector(vec![0.0]),
            1,
            1,
        )
        .unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[-2.0]);

        let out = conv1d_forward(
            &t2(1, 5, &[1.0, 2.0, 3.0, 4.0, 5.0]),
            &w3(1, 1, 3, &[1.0, 1.0, 1.0]),
            &Tensor::vector(vec![0.0]),
            2,
            1,
        )
        .unwrap();
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let x = t2(2, 4, &[1.0, -2.0, 3.5, 0.25, 7.0, 8.0, -9.0, 1e-3]);
        let w = w3(2, 2, 1, &[1.0, 0.0, 0.0, 1.0]);
        let out = conv1d_forward(&x, &w, &Tensor::vector(vec![0.0, 0.0]), 1, 1).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn conv_errors_name_the_dimension() {
        let x = t2(2, 5, &[0.0; 10]);
        let bad_w = w3(1, 3, 3, &[0.0; 9]);
        let err = conv1d_forward(&x, &bad_w, &Tensor::vector(vec![0.0]), 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");

        let w = w3(1, 2, 3, &[0.0; 6]);
        let err = conv1d_forward(&x, &w, &Tensor::vector(vec![0.0]), 3, 1).unwrap_err();
        assert!(matches!(err, Error::WindowUnderflow { needed: 7, got: 5, .. }), "{err}");
        assert!(err.to_string().contains("window underflow"));
    }

    #[test]
    fn strided_conv_matches_subsampled_dense_conv() {
        let x = t2(2, 9, &(0..18).map(|v| (v as f64 * 0.37).sin()).collect::<Vec<_>>());
        let w = w3(3, 2, 3, &(0..18).map(|v| (v as f64 * 0.91).cos()).collect::<Vec<_>>());
        let b = Tensor::vector(vec![0.1, -0.2, 0.3]);
        let dense = conv1d_forward(&x, &w, &b, 1, 1).unwrap();
        let strided = conv1d_forward(&x, &w, &b, 1, 3).unwrap();
        assert_eq!(strided.shape(), &[3, 3]);
        for o in 0..3 {
            for j in 0..3 {
                assert_eq!(strided.at2(o, j).to_bits(), dense.at2(o, 3 * j).to_bits());
            }
        }
    }

    #[test]
    fn linear_hand_examples() {
        let x = t2(2, 1, &[1.0, 1.0]);
        let w = t2(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let out = linear_forward(&x, &w, &Tensor::vector(vec![1.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[3.0, 4.0]);

        let x = t2(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let eye = t2(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(linear_forward(&x, &eye, &Tensor::vector(vec![0.0, 0.0])).unwrap(), x);

        let zero = Tensor::zeros(&[2, 2]);
        let out = linear_forward(&x, &zero, &Tensor::vector(vec![4.0, -1.0])).unwrap();
        assert_eq!(out.data(), &[4.0, 4.0, 4.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn linear_shape_mismatch() {
        let x = t2(3, 1, &[0.0; 3]);
        let w = t2(2, 2, &[0.0; 4]);
        assert!(linear_forward(&x, &w, &Tensor::vector(vec![0.0; 2])).is_err());
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::vector(vec![-3.0, -0.5]);
        assert!(relu_forward(&neg).data().iter().all(|&v| v == 0.0));
        let g = relu_backward(&Tensor::vector(vec![-1.0, 2.0]), &Tensor::vector(vec![5.0, 5.0]));
        assert_eq!(g.data(), &[0.0, 5.0]);
        let g0 = relu_backward(&Tensor::vector(vec![0.0]), &Tensor::vector(vec![1.0]));
        assert_eq!(g0.data(), &[0.0]);
    }

    #[test]
    fn mpjpe_loss_hand_example() {
        // J = 2, root exact, joint 1 off by (3, 4, 0).
        let pred = t2(6, 1, &[0.0, 0.0, 0.0, 3.0, 4.0, 0.0]);
        let gt = Tensor::zeros(&[1, 2, 3]);
        let (loss, grad) = mpjpe_loss_forward_backward(&pred, &gt).unwrap();
        assert_eq!(loss, 2.5);
        assert_eq!(grad.data(), &[-0.3, -0.4, 0.0, 0.3, 0.4, 0.0]);
    }

    #[test]
    fn mpjpe_loss_zero_distance_has_zero_gradient() {
        let pred = t2(6, 1, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let gt = Tensor::new(vec![1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let (loss, grad) = mpjpe_loss_forward_backward(&pred, &gt).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn crop_picks_columns() {
        let x = t2(1, 7, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(crop_forward(&x, 1, 3, 2).unwrap().data(), &[1.0, 4.0]);
        assert!(crop_forward(&x, 1, 3, 3).is_err());
        let g = crop_backward(&[1, 7], 1, 3, &t2(1, 2, &[2.0, 5.0]));
        assert_eq!(g.data(), &[0.0, 2.0, 0.0, 0.0, 5.0, 0.0, 0.0]);
    }
}
