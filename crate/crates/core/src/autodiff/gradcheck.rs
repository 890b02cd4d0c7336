//! Central finite-difference gradient checking.

use super::tensor::Tensor;
use crate::error::{invalid, Error, Result};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is ~0 are judged by absolute error instead of amplified noise.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Relative discrepancy between an analytic and a numeric derivative.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Maximum relative error between the analytic gradient returned by `f` and
/// the central difference `(f(p + eps) - f(p - eps)) / (2 eps)`, taken over
/// every coordinate of every parameter tensor.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<(f64, Vec<Tensor>)>,
{
    if !(eps > 0.0) {
        return Err(invalid("grad_check: eps must be positive"));
    }
    let (value, analytic) = f(params)?;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("grad_check: f(p) = {value}")));
    }
    if analytic.len() != params.len() {
        return Err(Error::Shape {
            op: "grad_check",
            dim: "gradient count",
            expected: params.len(),
            got: analytic.len(),
        });
    }

    let mut probe = params.to_vec();
    let mut worst = 0.0_f64;
    for (p, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[p].shape() {
            return Err(Error::Shape {
                op: "grad_check",
                dim: "gradient tensor",
                expected: params[p].len(),
                got: grad.len(),
            });
        }
        for i in 0..params[p].len() {
            let base = params[p].data()[i];
            probe[p].data_mut()[i] = base + eps;
            let (up, _) = f(&probe)?;
            probe[p].data_mut()[i] = base - eps;
            let (down, _) = f(&probe)?;
            probe[p].data_mut()[i] = base;
            if !up.is_finite() || !down.is_finite() {
                return Err(Error::NonFinite(format!(
                    "grad_check: non-finite f at tensor {p}, coordinate {i}"
                )));
            }
            let numeric = (up - down) / (2.0 * eps);
            worst = worst.max(relative_error(grad.data()[i], numeric));
        }
    }
    Ok(worst)
}
