//! Dense f32 tensors with tape-based reverse-mode differentiation, the layer
//! and loss set of the reconstruction network, Adam, and the network builder.

pub mod error;
pub mod gradcheck;
pub mod graph;
mod kernels;
pub mod loss;
pub mod network;
pub mod optim;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Graph, Var};
pub use loss::{
    composite_loss, loss_delta_bands, loss_delta_pixel, loss_mae, loss_mse, loss_smooth_l1, LossConfig, LossMask,
    LossWeights,
};
pub use network::{build_network, Activation, Forward, Network, NetworkConfig, SkipLink};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use tensor::Tensor;
