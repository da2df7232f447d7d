//! Minimal differentiable primitives for the detector.
//!
//! Every op is a pair of free functions: a forward map and a backward map
//! that returns exact gradients of the forward map given the upstream
//! gradient. Ops are generic over [`Scalar`] so the same code trains in
//! `f32` and is gradient-checked in `f64`.

mod adam;
pub(crate) mod conv;
pub mod gradcheck;
mod ops;
mod param;
mod pool;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::{conv1d, conv1d_backward, conv3d, conv3d_backward, Conv1dGeom, Conv3dGeom, ConvGrads};
pub use ops::{
    add, bce_grad, bce_loss, linear, linear_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, softmax, softmax_backward, BCE_EPS,
};
pub use param::{ParamId, ParamStore};
pub use pool::{
    adaptive_avg_pool1d, adaptive_avg_pool1d_backward, adaptive_avg_pool3d,
    adaptive_avg_pool3d_backward,
};
pub use tensor::{Scalar, Tensor};
