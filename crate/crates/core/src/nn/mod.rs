//! A small differentiable engine: dense tensors, strided convolution and
//! transposed convolution, activations, mean squared error and Adam.
//!
//! Everything is generic over [`Scalar`] so the same code runs in `f64` for
//! gradient checks and in `f32` for training and scoring.

mod adam;
mod conv;
mod gemm;
mod loss;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use conv::{
    conv2d_backward, conv2d_forward, deconv2d_backward, deconv2d_forward, Activation, ConvGrads,
    ConvLayer, ConvMode, Scratch, LEAKY_SLOPE,
};
pub use loss::mse_loss;
pub use scalar::Scalar;
pub use tensor::Tensor;
