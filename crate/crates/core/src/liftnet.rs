//! Temporal dilated-convolution lifting network.
//!
//! A window of `F = 3^B` frames of 2D keypoints goes through a per-frame input
//! projection, then `B` residual blocks of kernel-3 convolutions with dilation
//! `3^b`, then a per-frame output head that regresses the 3D pose of the
//! window's center frame. With `B = 0` the model is a per-frame MLP with one
//! extra hidden layer.
//!
//! The same weights can be evaluated in two layouts:
//!
//! - *dense*: valid dilated convolutions over a whole clip, one output per
//!   window position ([`predict_sequence`]);
//! - *compact*: only the activations that feed a single center frame, which
//!   turns every block into a stride-3 convolution with dilation 1. Windows
//!   can be concatenated along time and trained as one batch.
//!
//! Both layouts perform the same floating-point operations per output value,
//! so their results are bitwise identical.

use std::io::{Read, Write};

use crate::autodiff::{mpjpe_loss_forward_backward, GradTape, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::rng::Stream;

pub const KERNEL: usize = 3;

/// 2D keypoints are root-centered per frame and divided by this before
/// entering the network.
pub const INPUT_UNIT_PX: f64 = 100.0;

/// The output head predicts in units of this many millimetres.
pub const OUTPUT_UNIT_MM: f64 = 100.0;

pub const MAX_BLOCKS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LiftNetSpec {
    pub joints: usize,
    pub blocks: usize,
    pub channels: usize,
    pub seed: u64,
}

impl LiftNetSpec {
    pub fn new(joints: usize, blocks: usize, channels: usize, seed: u64) -> Result<Self> {
        let spec = Self {
            joints,
            blocks,
            channels,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joints < 2 {
            return Err(invalid("liftnet: at least 2 joints are required"));
        }
        if self.channels < 1 {
            return Err(invalid("liftnet: channel width must be at least 1"));
        }
        if self.blocks > MAX_BLOCKS {
            return Err(invalid(format!("liftnet: at most {MAX_BLOCKS} blocks are supported")));
        }
        Ok(())
    }

    /// `F = 3^B`.
    pub fn receptive_field(&self) -> usize {
        KERNEL.pow(self.blocks as u32)
    }

    /// Number of blocks for a receptive field, if it is a power of 3.
    pub fn blocks_for_field(frames: usize) -> Option<usize> {
        let mut f = 1;
        for b in 0..=MAX_BLOCKS {
            if f == frames {
                return Some(b);
            }
            f *= KERNEL;
        }
        None
    }

    /// Shapes of every parameter tensor in declaration order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let (j, c) = (self.joints, self.channels);
        let mut shapes = vec![vec![c, 2 * j], vec![c]];
        if self.blocks == 0 {
            shapes.push(vec![c, c]);
            shapes.push(vec![c]);
        }
        for _ in 0..self.blocks {
            shapes.push(vec![c, c, KERNEL]);
            shapes.push(vec![c]);
        }
        shapes.push(vec![3 * j, c]);
        shapes.push(vec![3 * j]);
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftNetParams {
    spec: LiftNetSpec,
    tensors: Vec<Tensor>,
}

impl LiftNetParams {
    pub fn spec(&self) -> &LiftNetSpec {
        &self.spec
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn from_tensors(spec: LiftNetSpec, tensors: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if shapes.len() != tensors.len() {
            return Err(Error::Shape {
                op: "liftnet params",
                dim: "tensor count",
                expected: shapes.len(),
                got: tensors.len(),
            });
        }
        for (shape, t) in shapes.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "liftnet params",
                    dim: "tensor size",
                    expected: shape.iter().product(),
                    got: t.len(),
                });
            }
        }
        Ok(Self { spec, tensors })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Index of the first tensor of block `b` (its conv weight).
    fn block_index(&self, b: usize) -> usize {
        2 + 2 * b
    }

    /// Zero the convolution weight and bias of every block.
    pub fn zero_blocks(&mut self) {
        for b in 0..self.spec.blocks {
            let i = self.block_index(b);
            self.tensors[i].data_mut().fill(0.0);
            self.tensors[i + 1].data_mut().fill(0.0);
        }
    }
}

/// Seeded initialization: weights uniform with He scale `sqrt(2 / fan_in)`,
/// biases zero.
pub fn build(spec: LiftNetSpec) -> Result<LiftNetParams> {
    spec.validate()?;
    let mut rng = Stream::derive(spec.seed, &[0x11F7]);
    let tensors = spec
        .param_shapes()
        .into_iter()
        .map(|shape| {
            if shape.len() == 1 {
                return Tensor::zeros(&shape);
            }
            let fan_in: usize = shape[1..].iter().product();
            let bound = (6.0 / fan_in as f64).sqrt();
            let data = (0..shape.iter().product::<usize>())
                .map(|_| rng.uniform(-bound, bound))
                .collect();
            Tensor::new(shape, data).expect("shape product matches data")
        })
        .collect();
    Ok(LiftNetParams { spec, tensors })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Layout {
    Dense,
    Compact,
}

/// Records the network on `tape` and returns the head output `[3J, n]` in mm.
/// Every intermediate activation is appended to `trace` when given.
fn record<'p>(
    tape: &mut GradTape<'p>,
    params: &[Var],
    spec: &LiftNetSpec,
    input: Var,
    layout: Layout,
    mut trace: Option<&mut Vec<Var>>,
) -> Result<Var> {
    let mut h = tape.linear(input, params[0], params[1])?;
    h = tape.relu(h);
    if let Some(t) = trace.as_deref_mut() {
        t.push(h);
    }
    let mut next = 2;
    if spec.blocks == 0 {
        h = tape.linear(h, params[2], params[3])?;
        h = tape.relu(h);
        next = 4;
    }
    for b in 0..spec.blocks {
        let dilation = KERNEL.pow(b as u32);
        let (w, bias) = (params[next], params[next + 1]);
        next += 2;
        let (conv, skip) = match layout {
            Layout::Dense => {
                let conv = tape.conv1d(h, w, bias, dilation, 1)?;
                let len = tape.value(conv).shape()[1];
                (conv, tape.crop(h, dilation, 1, len)?)
            }
            Layout::Compact => {
                let conv = tape.conv1d(h, w, bias, 1, KERNEL)?;
                let len = tape.value(conv).shape()[1];
                (conv, tape.crop(h, 1, KERNEL, len)?)
            }
        };
        let act = tape.relu(conv);
        h = tape.add(act, skip)?;
        if let Some(t) = trace.as_deref_mut() {
            t.push(h);
        }
    }
    let head = tape.linear(h, params[next], params[next + 1])?;
    Ok(tape.scale(head, OUTPUT_UNIT_MM))
}

fn check_rows(spec: &LiftNetSpec, input: &Tensor, op: &'static str) -> Result<usize> {
    match input.shape() {
        [rows, t] if *rows == 2 * spec.joints => Ok(*t),
        [rows, _] => Err(Error::Shape {
            op,
            dim: "input rows (2 x joints)",
            expected: 2 * spec.joints,
            got: *rows,
        }),
        s => Err(Error::Shape {
            op,
            dim: "input rank",
            expected: 2,
            got: s.len(),
        }),
    }
}

/// Channel-major `[3J, n]` head output to `[n, J, 3]`, root-centered.
fn to_poses(head: &Tensor, joints: usize) -> Tensor {
    let n = head.shape()[1];
    let h = head.data();
    let mut out = vec![0.0; n * joints * 3];
    for s in 0..n {
        for j in 0..joints {
            for a in 0..3 {
                out[(s * joints + j) * 3 + a] = h[(3 * j + a) * n + s] - h[a * n + s];
            }
        }
    }
    Tensor::new(vec![n, joints, 3], out).expect("pose tensor size")
}

/// 3D pose (mm, root-relative, `[J, 3]`) of the center frame of `window`
/// (`[2J, F]`).
pub fn forward(params: &LiftNetParams, window: &Tensor) -> Result<Tensor> {
    let spec = params.spec;
    let t = check_rows(&spec, window, "liftnet forward")?;
    let f = spec.receptive_field();
    if t < f {
        return Err(Error::WindowUnderflow {
            op: "liftnet forward",
            needed: f,
            got: t,
        });
    }
    if t > f {
        return Err(Error::WindowOverflow {
            op: "liftnet forward",
            expected: f,
            got: t,
        });
    }
    let mut tape = GradTape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|p| tape.param(p)).collect();
    let input = tape.constant(window.clone());
    let out = record(&mut tape, &vars, &spec, input, Layout::Compact, None)?;
    to_poses(tape.value(out), spec.joints).reshape(&[spec.joints, 3])
}

/// Sliding-window predictions over a whole clip `[2J, T]`: output `s` is the
/// pose of frame `s + (F - 1) / 2`, shape `[T - F + 1, J, 3]`.
pub fn predict_sequence(params: &LiftNetParams, clip2d: &Tensor) -> Result<Tensor> {
    let spec = params.spec;
    let t = check_rows(&spec, clip2d, "predict_sequence")?;
    let f = spec.receptive_field();
    if t < f {
        return Err(Error::WindowUnderflow {
            op: "predict_sequence",
            needed: f,
            got: t,
        });
    }
    let mut tape = GradTape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|p| tape.param(p)).collect();
    let input = tape.constant(clip2d.clone());
    let out = record(&mut tape, &vars, &spec, input, Layout::Dense, None)?;
    Ok(to_poses(tape.value(out), spec.joints))
}

/// Hidden activations of the dense layout: after the input projection, then
/// after each residual block.
pub fn trace_activations(params: &LiftNetParams, clip2d: &Tensor) -> Result<Vec<Tensor>> {
    let spec = params.spec;
    check_rows(&spec, clip2d, "trace")?;
    let mut tape = GradTape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|p| tape.param(p)).collect();
    let input = tape.constant(clip2d.clone());
    let mut trace = Vec::new();
    record(&mut tape, &vars, &spec, input, Layout::Dense, Some(&mut trace))?;
    Ok(trace.into_iter().map(|v| tape.value(v).clone()).collect())
}

/// Mean root-aligned joint error between two `[J, 3]` poses and its gradient
/// with respect to `pred`.
pub fn loss_mpjpe(pred: &Tensor, gt: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != gt.shape() || pred.shape().len() != 2 || pred.shape()[1] != 3 {
        return Err(Error::Shape {
            op: "loss_mpjpe",
            dim: "pose shape",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    let joints = pred.shape()[0];
    let channel_major = pred.clone().reshape(&[3 * joints, 1])?;
    let (loss, grad) = mpjpe_loss_forward_backward(&channel_major, gt)?;
    Ok((loss, grad.reshape(&[joints, 3])?))
}

/// Batched training objective over windows concatenated along time.
///
/// `windows` is `[2J, n·F]` (window `i` occupies columns `i·F..(i+1)·F`) and
/// `targets` is `[n, J, 3]`. Returns the mean MPJPE over the batch and its
/// gradient for every parameter tensor.
pub fn loss_and_grad(params: &LiftNetParams, windows: &Tensor, targets: &Tensor) -> Result<(f64, Vec<Tensor>)> {
    let spec = params.spec;
    let t = check_rows(&spec, windows, "liftnet batch")?;
    let f = spec.receptive_field();
    let n = targets.shape().first().copied().unwrap_or(0);
    if n == 0 || t != n * f {
        return Err(Error::Shape {
            op: "liftnet batch",
            dim: "window columns (n x F)",
            expected: n * f,
            got: t,
        });
    }
    let mut tape = GradTape::new();
    let vars: Vec<Var> = params.tensors.iter().map(|p| tape.param(p)).collect();
    let input = tape.constant(windows.clone());
    let head = record(&mut tape, &vars, &spec, input, Layout::Compact, None)?;
    let loss = tape.mpjpe_loss(head, targets)?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss, 1.0)?;
    Ok((value, vars.iter().map(|&v| grads.take(v)).collect()))
}

/// Network input `[2J, T]` from `T` frames of `[J, 2]` pixel keypoints.
pub fn encode_keypoints(joints2d: &[f64], joints: usize) -> Result<Tensor> {
    if joints == 0 || !joints2d.len().is_multiple_of(2 * joints) {
        return Err(invalid("encode_keypoints: data is not a whole number of frames"));
    }
    let t = joints2d.len() / (2 * joints);
    let mut out = vec![0.0; 2 * joints * t];
    for f in 0..t {
        let frame = &joints2d[f * 2 * joints..(f + 1) * 2 * joints];
        for j in 0..joints {
            for a in 0..2 {
                out[(2 * j + a) * t + f] = (frame[2 * j + a] - frame[a]) / INPUT_UNIT_PX;
            }
        }
    }
    Tensor::new(vec![2 * joints, t], out)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"PLM1";

/// Checkpoint layout: `PLM1`, then `joints`, `blocks`, `channels`, `kernel` as
/// u32 LE, `seed` as u64 LE, then every parameter tensor's values as f64 LE in
/// declaration order.
pub fn save_checkpoint<W: Write>(params: &LiftNetParams, mut w: W) -> Result<()> {
    let s = params.spec;
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in [s.joints, s.blocks, s.channels, KERNEL] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&s.seed.to_le_bytes())?;
    for t in &params.tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<R: Read>(mut r: R) -> Result<LiftNetParams> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("checkpoint: bad magic, expected PLM1".into()));
    }
    let mut u32s = [0usize; 4];
    for v in &mut u32s {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b) as usize;
    }
    let [joints, blocks, channels, kernel] = u32s;
    if kernel != KERNEL {
        return Err(Error::Format(format!("checkpoint: kernel {kernel} unsupported")));
    }
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    let spec = LiftNetSpec::new(joints, blocks, channels, u64::from_le_bytes(b))?;
    let tensors = spec
        .param_shapes()
        .into_iter()
        .map(|shape| {
            let n = shape.iter().product::<usize>();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut b)?;
                data.push(f64::from_le_bytes(b));
            }
            Tensor::new(shape, data)
        })
        .collect::<Result<Vec<_>>>()?;
    LiftNetParams::from_tensors(spec, tensors)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(rows: usize, t: usize, seed: u64) -> Tensor {
        let mut rng = Stream::new(seed);
        Tensor::matrix(rows, t, (0..rows * t).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    }

    #[test]
    fn receptive_field_is_power_of_three() {
        for (b, f) in [(0, 1), (3, 27), (5, 243)] {
            assert_eq!(LiftNetSpec::new(17, b, 8, 0).unwrap().receptive_field(), f);
            assert_eq!(LiftNetSpec::blocks_for_field(f), Some(b));
        }
        assert_eq!(LiftNetSpec::blocks_for_field(10), None);
    }

    #[test]
    fn spec_validation() {
        assert!(LiftNetSpec::new(1, 1, 8, 0).is_err());
        assert!(LiftNetSpec::new(2, 1, 0, 0).is_err());
    }

    #[test]
    fn per_frame_model_has_no_conv_blocks() {
        let p = build(LiftNetSpec::new(4, 0, 8, 1).unwrap()).unwrap();
        let shapes: Vec<_> = p.tensors().iter().map(|t| t.shape().to_vec()).collect();
        assert_eq!(shapes, vec![vec![8, 8], vec![8], vec![8, 8], vec![8], vec![12, 8], vec![12]]);
        assert!(shapes.iter().all(|s| s.len() < 3));
    }

    #[test]
    fn build_is_deterministic() {
        let spec = LiftNetSpec::new(5, 2, 6, 42).unwrap();
        assert_eq!(build(spec).unwrap(), build(spec).unwrap());
        let other = LiftNetSpec { seed: 43, ..spec };
        assert_ne!(build(spec).unwrap(), build(other).unwrap());
    }

    #[test]
    fn window_length_is_enforced() {
        let p = build(LiftNetSpec::new(3, 2, 4, 0).unwrap()).unwrap();
        let short = forward(&p, &random_input(6, 8, 1)).unwrap_err();
        assert!(short.to_string().contains("window underflow"));
        let long = forward(&p, &random_input(6, 10, 1)).unwrap_err();
        assert!(long.to_string().contains("window overflow"));
        assert!(forward(&p, &random_input(4, 9, 1)).is_err());
        assert!(predict_sequence(&p, &random_input(6, 8, 1)).is_err());
    }

    #[test]
    fn temporal_shrink_audit() {
        let p = build(LiftNetSpec::new(3, 3, 4, 0).unwrap()).unwrap();
        let lens: Vec<usize> = trace_activations(&p, &random_input(6, 27, 2))
            .unwrap()
            .iter()
            .map(|t| t.shape()[1])
            .collect();
        assert_eq!(lens, vec![27, 25, 19, 1]);
    }

    #[test]
    fn sequence_output_count_and_centering() {
        let p = build(LiftNetSpec::new(3, 3, 4, 0).unwrap()).unwrap();
        assert_eq!(predict_sequence(&p, &random_input(6, 27, 3)).unwrap().shape(), &[1, 3, 3]);
        assert_eq!(predict_sequence(&p, &random_input(6, 100, 3)).unwrap().shape(), &[74, 3, 3]);
        let p0 = build(LiftNetSpec::new(3, 0, 4, 0).unwrap()).unwrap();
        assert_eq!(predict_sequence(&p0, &random_input(6, 10, 3)).unwrap().shape(), &[10, 3, 3]);
    }

    #[test]
    fn forward_matches_sliding_prediction_bitwise() {
        for blocks in 0..=3 {
            let p = build(LiftNetSpec::new(4, blocks, 5, 9).unwrap()).unwrap();
            let f = p.spec().receptive_field();
            let clip = random_input(8, f + 6, 4);
            let seq = predict_sequence(&p, &clip).unwrap();
            for s in 0..7 {
                let window = crate::autodiff::crop_forward(&clip, s, 1, f).unwrap();
                let single = forward(&p, &window).unwrap();
                let row = &seq.data()[s * 12..(s + 1) * 12];
                assert!(single.data().iter().zip(row).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }

    #[test]
    fn output_is_root_relative() {
        let p = build(LiftNetSpec::new(4, 1, 5, 9).unwrap()).unwrap();
        let out = forward(&p, &random_input(8, 3, 5)).unwrap();
        assert_eq!(&out.data()[..3], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn residual_identity_with_zero_blocks() {
        let mut p = build(LiftNetSpec::new(3, 3, 4, 1).unwrap()).unwrap();
        p.zero_blocks();
        let acts = trace_activations(&p, &random_input(6, 27, 6)).unwrap();
        for b in 0..3 {
            let d = 3usize.pow(b as u32);
            let len = acts[b + 1].shape()[1];
            let cropped = crate::autodiff::crop_forward(&acts[b], d, 1, len).unwrap();
            assert_eq!(acts[b + 1], cropped);
        }
    }

    #[test]
    fn loss_examples() {
        let gt = Tensor::zeros(&[2, 3]);
        let pred = Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 3.0, 4.0, 0.0]).unwrap();
        assert_eq!(loss_mpjpe(&pred, &gt).unwrap().0, 2.5);
        assert_eq!(loss_mpjpe(&gt, &gt).unwrap().0, 0.0);
        let shifted = Tensor::matrix(2, 3, vec![7.0, -2.0, 4.0, 10.0, 2.0, 4.0]).unwrap();
        assert_eq!(loss_mpjpe(&shifted, &gt).unwrap().0, 2.5);
    }

    #[test]
    fn encode_centers_on_root() {
        // Two joints, two frames.
        let kp = [10.0, 20.0, 110.0, -80.0, 0.0, 0.0, 50.0, 50.0];
        let t = encode_keypoints(&kp, 2).unwrap();
        assert_eq!(t.shape(), &[4, 2]);
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 0.0, 1.0, 0.5, -1.0, 0.5]);
    }

    #[test]
    fn checkpoint_round_trip_and_magic() {
        let p = build(LiftNetSpec::new(3, 2, 4, 77).unwrap()).unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&p, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"PLM1");
        assert_eq!(buf.len(), 4 + 16 + 8 + 8 * p.parameter_count());
        assert_eq!(load_checkpoint(buf.as_slice()).unwrap(), p);
        buf[0] = b'X';
        assert!(load_checkpoint(buf.as_slice()).is_err());
    }
}
