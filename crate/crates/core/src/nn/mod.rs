//! Minimal differentiable-computation layer: tensors, a gradient tape,
//! dense networks, Adam, squashed-Gaussian sampling and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod dist;
pub mod gradcheck;
pub mod layers;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::{Adam, AdamConfig, ScalarAdam};
pub use layers::{mlp_forward, Activation, Grad, LayerSpec, Linear, Mlp};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Backward, Tape, Var};
pub use tensor::{Real, Tensor};
