#![allow(dead_code)]

use poselift::autodiff::{grad_check, Tensor};
use poselift::liftnet::{self, LiftNetParams, LiftNetSpec};
use poselift::rng::Stream;

pub const GRAD_EPS: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Random lifting problem: network, batch of windows and target poses.
pub fn instance(blocks: usize, seed: u64) -> (LiftNetParams, Tensor, Tensor) {
    let mut rng = Stream::new(seed);
    let joints = 2 + rng.below(3);
    let channels = 2 + rng.below(4);
    let n = 1 + rng.below(3);
    let spec = LiftNetSpec::new(joints, blocks, channels, rng.next_u64()).unwrap();
    let mut params = liftnet::build(spec).unwrap();
    // Non-zero biases move the ReLU kinks away from the origin.
    for t in params.tensors_mut() {
        if t.shape().len() == 1 {
            for v in t.data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }
    let f = spec.receptive_field();
    let input: Vec<f64> = (0..2 * joints * n * f).map(|_| rng.uniform(-2.0, 2.0)).collect();
    let target: Vec<f64> = (0..n * joints * 3).map(|_| rng.uniform(-300.0, 300.0)).collect();
    (
        params,
        Tensor::new(vec![2 * joints, n * f], input).unwrap(),
        Tensor::new(vec![n, joints, 3], target).unwrap(),
    )
}

/// Worst relative error between backprop and central differences over every
/// parameter of one random instance.
pub fn network_grad_error(blocks: usize, seed: u64) -> f64 {
    let (params, windows, targets) = instance(blocks, seed);
    let spec = *params.spec();
    let f = |ps: &[Tensor]| {
        let p = LiftNetParams::from_tensors(spec, ps.to_vec())?;
        liftnet::loss_and_grad(&p, &windows, &targets)
    };
    grad_check(f, params.tensors(), GRAD_EPS).unwrap()
}

/// Perturb one frame outside output `s`'s receptive window of a random clip
/// and report whether prediction `s` moved, along with whether a perturbation
/// inside the window moved it.
pub fn locality_probe(blocks: usize, seed: u64) -> (bool, bool) {
    let mut rng = Stream::new(seed ^ 0x10CA1);
    let spec = LiftNetSpec::new(3, blocks, 16, rng.next_u64()).unwrap();
    let f = spec.receptive_field();
    let params = liftnet::build(spec).unwrap();
    let t = 2 * f + rng.below(f + 3);
    let clip: Vec<f64> = (0..6 * t).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let clip = Tensor::new(vec![6, t], clip).unwrap();
    let outputs = t - f + 1;
    let s = rng.below(outputs);
    let outside: Vec<usize> = (0..t).filter(|&fr| fr < s || fr >= s + f).collect();
    let base = liftnet::predict_sequence(&params, &clip).unwrap();
    let row = |p: &Tensor| p.data()[s * 9..(s + 1) * 9].to_vec();

    let perturb = |frame: usize, rng: &mut Stream| {
        let mut c = clip.clone();
        for r in 0..6 {
            c.data_mut()[r * t + frame] += rng.uniform(-5.0, 5.0);
        }
        liftnet::predict_sequence(&params, &c).unwrap()
    };
    let far = perturb(outside[rng.below(outside.len())], &mut rng);
    let near = perturb(s + (f - 1) / 2, &mut rng);
    (row(&far) != row(&base), row(&near) != row(&base))
}
