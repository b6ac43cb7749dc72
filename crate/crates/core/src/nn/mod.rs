//! Minimal NHWC tensor, layer, optimiser and training stack with hand-written backward passes.
//!
//! Networks train in `f32`; every layer is generic over [`Scalar`] so gradients can be
//! verified against finite differences in `f64`.

mod batchnorm;
mod conv;
pub mod gradcheck;
mod layers;
mod model;
mod ops;
mod optim;
mod pool;
mod tensor;
mod train;

pub use batchnorm::{batchnorm_backward, batchnorm_infer, batchnorm_train, BatchNormCache};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads, Padding};
pub use layers::{BatchNorm, Conv2d, Dense, Layer, LayerSpec, ResidualBlock};
pub use model::{argmax, Model};
pub use ops::{
    dense_backward, dense_forward, global_avg_pool_backward, global_avg_pool_forward, relu_backward, relu_forward,
    softmax, softmax_crossentropy,
};
pub use optim::Adam;
pub use pool::{maxpool2d_backward, maxpool2d_forward, PoolOutput};
pub use tensor::{Param, Scalar, Tensor};
pub use train::{evaluate_loss, stack_inputs, train, EpochRecord, Example, StopReason, TrainHistory, TrainSchedule};
