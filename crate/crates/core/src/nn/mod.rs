//! Small tensor and layer library with hand-written backpropagation.
//!
//! Layers cache what they need during `forward` and consume it in `backward`.
//! Parameter gradients accumulate until the optimizer zeroes them.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use layers::{
    BatchNorm, Conv2d, Ctx, Dropout, Layer, Linear, MaxOver, MaxPool2d, MeanPool, Mode, Param,
    Relu, RowScale, Sequential,
};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_batch};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Real, Tensor};
