//! Minimal dense tensors with reverse-mode differentiation.

mod adam;
mod gradcheck;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, RELATIVE_FLOOR};
pub use tape::{GradTape, Gradients, Var};
pub use tensor::{
    conv1d_backward, conv1d_forward, conv_geometry, crop_backward, crop_forward, linear_backward, linear_forward,
    mpjpe_loss_forward_backward, relu_backward, relu_forward, ConvGeom, ConvGrads, LinearGrads, Tensor,
};

/// Valid dilated 1-D cross-correlation of `[C_in, T]` with `[C_out, C_in, K]`.
pub fn conv1d_dilated(input: &Tensor, weight: &Tensor, bias: &Tensor, dilation: usize) -> crate::Result<Tensor> {
    conv1d_forward(input, weight, bias, dilation, 1)
}
