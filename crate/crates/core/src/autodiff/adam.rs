//! Bias-corrected Adam.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState, hyper: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Shape {
            op: "adam",
            dim: "parameter count",
            expected: params.len(),
            got: grads.len().min(state.m.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape {
                op: "adam",
                dim: "parameter tensor",
                expected: p.len(),
                got: if p.shape() != g.shape() { g.len() } else { m.len() },
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = hyper.beta1 * *mv + (1.0 - hyper.beta1) * gv;
            *vv = hyper.beta2 * *vv + (1.0 - hyper.beta2) * gv * gv;
            // Moments of long-idle coordinates decay into subnormals, which
            // are slow to compute with and far below any visible update.
            if mv.abs() < f64::MIN_POSITIVE {
                *mv = 0.0;
            }
            if *vv < f64::MIN_POSITIVE {
                *vv = 0.0;
            }
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = vec![Tensor::vector(vec![1.0, -2.0, 3.0])];
        let before = params.clone();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[Tensor::zeros(&[3])], &mut state, &AdamConfig::default()).unwrap();
        assert_eq!(params, before);
        assert_eq!(state.step(), 1);
    }

    #[test]
    fn zero_betas_give_sign_like_step() {
        let hyper = AdamConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-8,
        };
        let g = [0.5, -4.0, 1e-3];
        let mut params = vec![Tensor::vector(vec![0.0; 3])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &[Tensor::vector(g.to_vec())], &mut state, &hyper).unwrap();
        for (p, gv) in params[0].data().iter().zip(g) {
            assert_eq!(*p, -hyper.lr * gv / (gv.abs() + hyper.eps));
        }
    }

    #[test]
    fn step_counter_increments_by_one() {
        let mut params = vec![Tensor::vector(vec![1.0])];
        let mut state = AdamState::new(&params);
        let g = [Tensor::vector(vec![0.3])];
        for expected in 1..=3 {
            adam_step(&mut params, &g, &mut state, &AdamConfig::default()).unwrap();
            assert_eq!(state.step(), expected);
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut state = AdamState::new(&params);
        let err = adam_step(&mut params, &[Tensor::vector(vec![1.0])], &mut state, &AdamConfig::default());
        assert!(err.is_err());
    }
}
