//! Per-action versus pooled training of a temporal-convolutional pose lifter.
//!
//! The crate is organized bottom-up:
//!
//! - [`autodiff`]: dense tensors, a gradient tape, Adam and gradient checking.
//! - [`liftnet`]: the dilated temporal convolution lifting network.
//! - [`synth`]: seeded synthetic motion capture with action labels.
//! - [`budget`]: epoch equivalence and data-budget allocation between schedules.
//! - [`metrics`]: MPJPE, velocity MPJPE, time-precision rate and convergence.
//! - [`trainer`]: deterministic execution of a training plan.
//! - [`harness`]: experiment orchestration and report writers used by the CLI.

pub mod autodiff;
pub mod budget;
pub mod error;
pub mod harness;
pub mod liftnet;
pub mod metrics;
pub mod rng;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
