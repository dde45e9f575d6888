//! Minimal reverse-mode building blocks: convolution, pooling, bilinear
//! upsampling, activations, losses and SGD, generic over `f32`/`f64`.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
mod scalar;
mod tensor;

pub use layers::{Affine, Conv2d, ConvGrads};
pub use loss::{bce_with_logits, weighted_masked_bce, LossSpec, PROB_EPS};
pub use optim::sgd_step;
pub use scalar::Scalar;
pub use tensor::{accumulate, scale_grads, Grads, Model, Param, Tensor4};
