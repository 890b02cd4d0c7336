use poselift::autodiff::{conv1d_backward, conv1d_forward, Tensor};
use proptest::prelude::*;

/// Direct evaluation of `b[o] + Σ_c Σ_k w[o,c,k] · x[c, t·s + k·d]`.
fn oracle(x: &Tensor, w: &Tensor, b: &Tensor, d: usize, s: usize) -> Vec<f64> {
    let (c_in, t_in) = (x.shape()[0], x.shape()[1]);
    let (c_out, k_len) = (w.shape()[0], w.shape()[2]);
    let t_out = (t_in - (k_len - 1) * d - 1) / s + 1;
    let mut out = Vec::with_capacity(c_out * t_out);
    for o in 0..c_out {
        for t in 0..t_out {
            let mut acc = 0.0;
            for c in 0..c_in {
                for k in 0..k_len {
                    acc += w.data()[(o * c_in + c) * k_len + k] * x.data()[c * t_in + t * s + k * d];
                }
            }
            out.push(b.data()[o] + acc);
        }
    }
    out
}

fn tensor(shape: Vec<usize>, values: &[f64]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, values[..n].to_vec()).unwrap()
}

fn conv_case() -> impl Strategy<Value = (usize, usize, usize, usize, usize, usize, Vec<f64>)> {
    (1usize..4, 1usize..4, 1usize..4, 1usize..10, 1usize..4, 0usize..12).prop_flat_map(|(ci, co, k, d, s, extra)| {
        let t = (k - 1) * d + 1 + extra;
        let n = ci * t + co * ci * k + co + ci * t;
        (
            Just(ci),
            Just(co),
            Just(k),
            Just(d),
            Just(s),
            Just(t),
            proptest::collection::vec(-3.0f64..3.0, n),
        )
    })
}

proptest! {
    #[test]
    fn forward_matches_direct_sum_bitwise((ci, co, k, d, s, t, v) in conv_case()) {
        let x = tensor(vec![ci, t], &v);
        let w = tensor(vec![co, ci, k], &v[ci * t..]);
        let b = tensor(vec![co], &v[ci * t + co * ci * k..]);
        let got = conv1d_forward(&x, &w, &b, d, s).unwrap();
        let want = oracle(&x, &w, &b, d, s);
        prop_assert_eq!(got.data(), want.as_slice());
    }

    #[test]
    fn forward_is_linear_in_input((ci, co, k, d, s, t, v) in conv_case(), alpha in -2.0f64..2.0) {
        let x1 = tensor(vec![ci, t], &v);
        let x2 = tensor(vec![ci, t], &v[ci * t + co * ci * k + co..]);
        let w = tensor(vec![co, ci, k], &v[ci * t..]);
        let zero = Tensor::zeros(&[co]);
        let mut mix = x1.clone();
        for (m, b) in mix.data_mut().iter_mut().zip(x2.data()) {
            *m = alpha * *m + b;
        }
        let lhs = conv1d_forward(&mix, &w, &zero, d, s).unwrap();
        let y1 = conv1d_forward(&x1, &w, &zero, d, s).unwrap();
        let y2 = conv1d_forward(&x2, &w, &zero, d, s).unwrap();
        for ((l, a), b) in lhs.data().iter().zip(y1.data()).zip(y2.data()) {
            prop_assert!((l - (alpha * a + b)).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_is_the_adjoint((ci, co, k, d, s, t, v) in conv_case()) {
        // <conv(x), g> = <x, conv^T(g)> + <b, Σ g> for the input gradient.
        let x = tensor(vec![ci, t], &v);
        let w = tensor(vec![co, ci, k], &v[ci * t..]);
        let b = tensor(vec![co], &v[ci * t + co * ci * k..]);
        let y = conv1d_forward(&x, &w, &b, d, s).unwrap();
        let g_vals: Vec<f64> = (0..y.len()).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let g = Tensor::new(y.shape().to_vec(), g_vals).unwrap();
        let grads = conv1d_backward(&x, &w, &b, d, s, &g, true).unwrap();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
        let lhs = dot(y.data(), g.data());
        let rhs = dot(x.data(), grads.input.unwrap().data()) + dot(b.data(), grads.bias.data());
        prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + lhs.abs()));
        let wdot = dot(w.data(), grads.weight.data());
        prop_assert!((lhs - dot(b.data(), grads.bias.data()) - wdot).abs() < 1e-9 * (1.0 + lhs.abs()));
    }
}

#[test]
fn dimension_mismatch_names_the_dimension() {
    let x = Tensor::zeros(&[2, 9]);
    let w = Tensor::zeros(&[4, 3, 3]);
    let b = Tensor::zeros(&[4]);
    let err = conv1d_forward(&x, &w, &b, 1, 1).unwrap_err().to_string();
    assert!(err.contains("input channels"), "{err}");
    let short = Tensor::zeros(&[3, 4]);
    let err = conv1d_forward(&short, &w, &b, 3, 1).unwrap_err().to_string();
    assert!(err.contains("window underflow"), "{err}");
}
